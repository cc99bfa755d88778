use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tkre_core::config::ExperimentConfig;

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").canonicalize().unwrap()
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let toy = toy_dir();
    let text = format!(
        r#"seed = 5
k = 4
output_dir = "out"

[data]
schema = "{schema}"
train = "{train}"
test = "{test}"

[encoder]
d_model = 16
n_heads = 2
n_layers = 1

[pretrain]
steps = 4
batch_size = 4

[finetune]
epochs = 2
batch_size = 8

[ablation]
seeds = 2
{extra}
"#,
        schema = toy.join("schema.json").display(),
        train = toy.join("train.jsonl").display(),
        test = toy.join("test.jsonl").display(),
    );
    let p = dir.join("tkre.toml");
    fs::write(&p, text).unwrap();
    p
}

fn tkre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tkre")).args(args).output().unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path) -> Output {
    let o = tkre(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(
        o.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_chain_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("run");
    for cmd in ["generate", "pretrain", "finetune", "eval"] {
        run_ok(cmd, &cfg, &out);
    }
    for f in [
        "golden.jsonl",
        "explanations.jsonl",
        "synthetic.jsonl",
        "generation_report.json",
        "pretrain.ckpt",
        "pretrain_log.jsonl",
        "model.ckpt",
        "eval.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join(".tkre.lock").exists());

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("generation_report.json")).unwrap()).unwrap();
    assert_eq!(report["explanations"], 5 * 4);
    assert_eq!(report["partial"], false);

    let m = manifest(&out);
    let cmds = m["commands"].as_object().unwrap();
    assert_eq!(cmds.len(), 4);
    let fp = cmds["generate"]["config_fingerprint"].as_str().unwrap();
    assert!(cmds.values().all(|e| e["config_fingerprint"] == fp));
    assert_eq!(cmds["eval"]["inputs"]["model.ckpt"], cmds["finetune"]["outputs"]["model.ckpt"]);

    let eval: Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["n_instances"], 200);
    assert_eq!(eval["config_fingerprint"], fp);
}

#[test]
fn rerun_is_byte_identical_and_manifest_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let a = tmp.path().join("a");
    run_ok("generate", &cfg, &a);
    run_ok("pretrain", &cfg, &a);
    let first = manifest(&a);
    run_ok("generate", &cfg, &a);
    run_ok("pretrain", &cfg, &a);
    assert_eq!(first, manifest(&a));

    let entry = &first["commands"]["pretrain"];
    let replay_cfg: ExperimentConfig = serde_json::from_value(entry["config"].clone()).unwrap();
    let toml_path = tmp.path().join("replay.toml");
    fs::write(&toml_path, replay_cfg.to_toml()).unwrap();
    let b = tmp.path().join("b");
    run_ok("generate", &toml_path, &b);
    run_ok("pretrain", &toml_path, &b);
    let second = manifest(&b);
    for cmd in ["generate", "pretrain"] {
        assert_eq!(first["commands"][cmd]["outputs"], second["commands"][cmd]["outputs"], "{cmd}");
        assert_eq!(
            first["commands"][cmd]["config_fingerprint"],
            second["commands"][cmd]["config_fingerprint"]
        );
    }
}

#[test]
fn missing_upstream_artifacts_name_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out.to_str().unwrap();

    let o = tkre(&["eval", "--config", cfg_s, "--out", out_s]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("model.ckpt") && stderr(&o).contains("tkre finetune"), "{}", stderr(&o));

    let o = tkre(&["pretrain", "--config", cfg_s, "--out", out_s]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("tkre generate"), "{}", stderr(&o));

    run_ok("generate", &cfg, &out);
    let o = tkre(&["finetune", "--config", cfg_s, "--out", out_s]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("pretrain.ckpt") && stderr(&o).contains("tkre pretrain"), "{}", stderr(&o));
}

#[test]
fn without_pretraining_finetune_needs_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "use_pretrain = false\nuse_synthetic = false\nuse_explanations = false");
    let out = tmp.path().join("run");
    for cmd in ["generate", "pretrain", "finetune", "eval"] {
        run_ok(cmd, &cfg, &out);
    }
    assert!(!out.join("pretrain.ckpt").exists());
    assert_eq!(fs::read_to_string(out.join("synthetic.jsonl")).unwrap(), "");
    assert_eq!(fs::read_to_string(out.join("explanations.jsonl")).unwrap(), "");
}

#[test]
fn config_errors_exit_2_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let out_s = out.to_str().unwrap();

    let cfg = tiny_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("k = 4", "k = -1");
    fs::write(&cfg, text).unwrap();
    let o = tkre(&["generate", "--config", cfg.to_str().unwrap(), "--out", out_s]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let cfg = tiny_config(tmp.path(), "");
    let o = tkre(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out_s, "--variants", "full,w/o NOTHING"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = tkre(&["generate", "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".tkre.lock"), "1").unwrap();
    let o = tkre(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"));
    assert!(!out.join("golden.jsonl").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = tkre(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "99"]);
    assert!(o.status.success());
    assert_eq!(manifest(&out)["commands"]["generate"]["seed"], 99);
}

#[test]
fn unreachable_backend_flags_partial_output_with_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = format!(
        "\n[backend]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:{port}/v1/generate\"\nmodel_name = \"stub\"\nmax_retries = 1\nbackoff_ms = 1\ntimeout_secs = 2\n"
    );
    let cfg = tiny_config(tmp.path(), &backend);
    let out = tmp.path().join("run");
    let o = tkre(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("partial"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("generation_report.json")).unwrap()).unwrap();
    assert_eq!(report["partial"], true);
    let failures = report["explanation_failures"].as_array().unwrap();
    assert!(!failures.is_empty());
    assert!(failures[0].to_string().contains("attempt"), "{}", failures[0]);
}

#[test]
fn ablate_emits_rows_per_seed_and_means() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = tkre(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--variants",
        "full,w/o ALL",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2 * (2 + 1));
    assert_eq!(rows.iter().filter(|r| r["kind"] == "mean").count(), 2);
    assert!(rows.iter().any(|r| r["variant"] == "w/o ALL"));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + rows.len());
    assert!(String::from_utf8_lossy(&o.stdout).contains("w/o ALL"));
}
