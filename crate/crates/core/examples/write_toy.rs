//! Regenerate the bundled toy corpus: `cargo run -p tkre-core --example write_toy [DIR]`.

use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy"));
    tkre_core::toy::write_toy(&dir).expect("write toy corpus");
    println!("wrote {}", dir.display());
}
