//! One full pipeline run on a config, printing timings and micro-F1.

use std::path::PathBuf;
use std::time::Instant;

use tkre_core::config::{ExperimentConfig, Variant};
use tkre_core::pipeline::{run_with, Inputs};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml"));
    let variant: Variant = args.next().as_deref().unwrap_or("full").parse().expect("variant");
    let seeds: Vec<u64> = args.map(|s| s.parse().expect("seed")).collect();
    let base = ExperimentConfig::load(&path).expect("config").with_variant(variant);
    let inputs = Inputs::load(&base).expect("inputs");
    for seed in if seeds.is_empty() { vec![base.seed] } else { seeds } {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let t = Instant::now();
        let run = run_with(&cfg, &inputs).expect("pipeline");
        let curve = run.pretrain_report.loss_curve();
        println!(
            "{} seed={seed} f1={:.4} p={:.4} r={:.4} pretrain={:.1}s finetune={:.1}s total={:.1}s loss {:.3} -> {:.3} finetune_set={}",
            variant.name(),
            run.eval.micro_f1,
            run.eval.micro_p,
            run.eval.micro_r,
            run.pretrain_report.wall_time_secs,
            run.finetune.report.wall_time_secs,
            t.elapsed().as_secs_f64(),
            curve.first().copied().unwrap_or(f64::NAN),
            curve.last().copied().unwrap_or(f64::NAN),
            run.generated.finetune_set().map(|d| d.len()).unwrap_or(0),
        );
        if std::env::var_os("TOY_VERBOSE").is_some() {
            for e in &run.finetune.report.epochs {
                println!("  epoch {} loss {:.4}", e.epoch, e.mean_loss);
            }
            let pred = tkre_core::evalkit::predict(&run.model.model, &run.model.vocab, &inputs.test).expect("predict");
            for (inst, p) in inputs.test.instances.iter().zip(pred) {
                let p = &run.model.schema.relations[p];
                if *p != inst.relation {
                    println!("  {} => {p} | {}", inst.relation, inst.sentence());
                }
            }
            for (rel, c) in &run.eval.per_relation {
                println!("  {rel:<28} tp={} fp={} fn={}", c.tp, c.fp, c.fn_);
            }
        }
    }
}
