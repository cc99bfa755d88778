use std::path::Path;

use serde_json::json;
use tkre_core::config::{ExperimentConfig, Variant};
use tkre_core::corpus::{dataset_to_jsonl, load_dataset, Dataset, RelationSchema};
use tkre_core::evalkit::{evaluate, parse_variants, run_ablation_with};
use tkre_core::genkit::{ExplanationCorpus, ExplanationRecord, GenerationReport};
use tkre_core::pipeline::{self, model_config, Generated, Inputs};
use tkre_core::trainloop::{
    encode_checkpoint, load_checkpoint, Checkpoint, RelationModel, TrainReport,
};

use crate::artifacts::*;
use crate::error::{CliError, EXIT_BACKEND};

fn load_schema(out: &mut OutDir, cfg: &ExperimentConfig) -> Result<RelationSchema, CliError> {
    let p = out.input(&cfg.data.schema)?;
    Ok(RelationSchema::load(&p)?)
}

fn load_split(out: &mut OutDir, path: &Path, schema: &RelationSchema) -> Result<Dataset, CliError> {
    let p = out.input(path)?;
    Ok(load_dataset(&p, schema)?)
}

/// Summary JSON without wall-clock fields, so reruns are byte-identical.
fn stable_summary(report: &TrainReport) -> serde_json::Value {
    let mut v = report.summary_json();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_time_secs");
    }
    v
}

pub fn generate(cfg: &ExperimentConfig) -> Result<ManifestEntry, CliError> {
    cfg.check_paths()?;
    let mut out = OutDir::open(cfg, "generate")?;
    let schema = load_schema(&mut out, cfg)?;
    let train = load_split(&mut out, &cfg.data.train, &schema)?;
    let g = pipeline::generate(cfg, &train)?;

    out.write(GOLDEN, dataset_to_jsonl(&g.golden).as_bytes())?;
    let explanations: String = g
        .explanations
        .records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    out.write(EXPLANATIONS, explanations.as_bytes())?;
    out.write(SYNTHETIC, dataset_to_jsonl(&g.synthetic).as_bytes())?;

    let failed_relations: Vec<&str> = g
        .report
        .relations
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.relation.as_str())
        .collect();
    let partial = !g.explanations.failures.is_empty() || !failed_relations.is_empty();
    let report = json!({
        "k": cfg.k(),
        "golden": g.golden.len(),
        "explanations": g.explanations.records.len(),
        "explanation_failures": g.explanations.failures,
        "synthetic": g.synthetic.len(),
        "synthetic_report": g.report,
        "rejections": g.report.rejections(),
        "partial": partial,
    });
    out.write(GENERATION_REPORT, &to_json(&report))?;
    let entry = out.finish()?;
    println!(
        "generate: {} golden, {} explanations, {} synthetic ({} rejected)",
        g.golden.len(),
        g.explanations.records.len(),
        g.synthetic.len(),
        g.report.rejections().values().sum::<usize>()
    );
    if partial {
        return Err(CliError::new(
            EXIT_BACKEND,
            format!(
                "generation incomplete: {} explanation failures, synthetic generation failed for [{}]; partial outputs written and flagged in {}",
                g.explanations.failures.len(),
                failed_relations.join(", "),
                GENERATION_REPORT
            ),
        ));
    }
    Ok(entry)
}

fn load_generated(out: &mut OutDir, schema: &RelationSchema) -> Result<Generated, CliError> {
    let golden = load_dataset(&out.require(GOLDEN, "generate")?, schema)?;
    let synthetic = load_dataset(&out.require(SYNTHETIC, "generate")?, schema)?;
    let path = out.require(EXPLANATIONS, "generate")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<ExplanationRecord>(l)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let path = out.require(GENERATION_REPORT, "generate")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let report: GenerationReport = serde_json::from_value(value["synthetic_report"].clone())
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(Generated {
        golden,
        explanations: ExplanationCorpus {
            records,
            failures: Vec::new(),
        },
        synthetic,
        report,
    })
}

pub fn pretrain(cfg: &ExperimentConfig) -> Result<ManifestEntry, CliError> {
    let mut out = OutDir::open(cfg, "pretrain")?;
    if !cfg.ablation.use_pretrain {
        println!("pretrain: disabled by the ablation settings; nothing to do");
        return out.finish();
    }
    let schema = load_schema(&mut out, cfg)?;
    let g = load_generated(&mut out, &schema)?;
    let vocab = pipeline::build_vocabulary(cfg, &g);
    let (model, report) = pipeline::run_pretrain(cfg, &vocab, &g)?;
    let ck = Checkpoint {
        model: RelationModel { model, vocab, schema },
        optimizer: None,
        epoch: 0,
    };
    out.write(PRETRAIN_CKPT, &encode_checkpoint(&ck))?;
    out.write(PRETRAIN_LOG, report.to_jsonl().as_bytes())?;
    out.write(PRETRAIN_SUMMARY, &to_json(&stable_summary(&report)))?;
    let curve = report.loss_curve();
    println!(
        "pretrain: {} steps in {:.1}s, loss {:.4} -> {:.4}",
        curve.len(),
        report.wall_time_secs,
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.finish()
}

pub fn finetune(cfg: &ExperimentConfig) -> Result<ManifestEntry, CliError> {
    cfg.check_paths()?;
    let mut out = OutDir::open(cfg, "finetune")?;
    let schema = load_schema(&mut out, cfg)?;
    let val = match &cfg.data.val {
        Some(p) => Some(load_split(&mut out, p, &schema)?),
        None => None,
    };
    let g = load_generated(&mut out, &schema)?;
    let (model, vocab) = if cfg.ablation.use_pretrain {
        let path = out.require(PRETRAIN_CKPT, "pretrain")?;
        let ck = load_checkpoint(&path)?;
        let rm = ck.model;
        if rm.model.config != model_config(cfg, &rm.vocab, &schema) || rm.schema != schema {
            return Err(CliError::config(format!(
                "{} was produced with a different configuration; rerun `tkre pretrain`",
                path.display()
            )));
        }
        (rm.model, rm.vocab)
    } else {
        let vocab = pipeline::build_vocabulary(cfg, &g);
        let (model, _) = pipeline::run_pretrain(cfg, &vocab, &g)?;
        (model, vocab)
    };
    let train = g.finetune_set()?;
    let ft = pipeline::run_finetune(cfg, model, &vocab, &train, val.as_ref())?;
    let selected_is_final = ft.best_epoch.is_none();
    let ck = Checkpoint {
        model: RelationModel {
            model: ft.selected.clone(),
            vocab,
            schema,
        },
        optimizer: selected_is_final.then(|| ft.state.optimizer.clone()),
        epoch: ft.best_epoch.unwrap_or(ft.state.epoch),
    };
    out.write(MODEL_CKPT, &encode_checkpoint(&ck))?;
    out.write(FINETUNE_LOG, ft.report.to_jsonl().as_bytes())?;
    let mut summary = stable_summary(&ft.report);
    summary["train_instances"] = json!(train.len());
    summary["best_epoch"] = json!(ft.best_epoch);
    summary["best_val_micro_f1"] = json!(ft.best_val_f1);
    out.write(FINETUNE_SUMMARY, &to_json(&summary))?;
    println!(
        "finetune: {} instances, {} epochs in {:.1}s{}",
        train.len(),
        ft.state.epoch,
        ft.report.wall_time_secs,
        ft.best_epoch.map(|e| format!(", selected epoch {e}")).unwrap_or_default()
    );
    out.finish()
}

pub fn eval(cfg: &ExperimentConfig) -> Result<ManifestEntry, CliError> {
    cfg.check_paths()?;
    let mut out = OutDir::open(cfg, "eval")?;
    let schema = load_schema(&mut out, cfg)?;
    let test = load_split(&mut out, &cfg.data.test, &schema)?;
    let path = out.require(MODEL_CKPT, "finetune")?;
    let rm = load_checkpoint(&path)?.model;
    let mut result = evaluate(&rm, &test)?;
    result.config_fingerprint = cfg.fingerprint();
    out.write(EVAL, &to_json(&result))?;
    println!(
        "eval: micro P {:.4} R {:.4} F1 {:.4} on {} instances",
        result.micro_p, result.micro_r, result.micro_f1, result.n_instances
    );
    out.finish()
}

pub fn ablate(cfg: &ExperimentConfig, variants: &[String]) -> Result<ManifestEntry, CliError> {
    let variants: Vec<Variant> = if variants.is_empty() {
        cfg.ablation.variants.clone()
    } else {
        parse_variants(variants)?
    };
    cfg.check_paths()?;
    let mut out = OutDir::open(cfg, "ablate")?;
    for p in [&cfg.data.schema, &cfg.data.train, &cfg.data.test].into_iter().chain(cfg.data.val.as_ref()) {
        out.input(p)?;
    }
    let inputs = Inputs::load(cfg)?;
    let table = run_ablation_with(cfg, &inputs, &variants)?;
    out.write(ABLATION_JSON, table.to_json().as_bytes())?;
    out.write(ABLATION_TXT, table.to_text().as_bytes())?;
    out.write(ABLATION_CSV, table.to_csv().as_bytes())?;
    print!("{}", table.to_text());
    out.finish()
}
