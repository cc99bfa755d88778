use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Variant};
use crate::pipeline::{run_with, Inputs, PipelineError};
use crate::seed::derive_seed;

const ABLATION_STREAM: u64 = 0xab1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Run,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub kind: RowKind,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub n_runs: usize,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    /// Sample standard deviation of micro-F1 (mean rows only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1_std: Option<f64>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl AblationTable {
    pub fn mean_row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.kind == RowKind::Mean && r.variant == v.name())
    }

    pub fn mean_f1(&self, v: Variant) -> Option<f64> {
        self.mean_row(v).map(|r| r.micro_f1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,kind,k,seed,n_runs,micro_p,micro_r,micro_f1,f1_std,config_fingerprint\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
                r.variant,
                match r.kind {
                    RowKind::Run => "run",
                    RowKind::Mean => "mean",
                },
                r.k,
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.n_runs,
                r.micro_p,
                r.micro_r,
                r.micro_f1,
                r.f1_std.map(|s| format!("{s:.6}")).unwrap_or_default(),
                r.config_fingerprint
            ));
        }
        out
    }

    /// Aligned plain-text table, one line per row.
    pub fn to_text(&self) -> String {
        let header = ["variant", "row", "K", "seed", "P", "R", "F1"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let f1 = match r.f1_std {
                    Some(s) => format!("{:.2} ± {:.2}", 100.0 * r.micro_f1, 100.0 * s),
                    None => format!("{:.2}", 100.0 * r.micro_f1),
                };
                [
                    r.variant.clone(),
                    match r.kind {
                        RowKind::Run => "run".into(),
                        RowKind::Mean => format!("mean/{}", r.n_runs),
                    },
                    r.k.to_string(),
                    r.seed.map(|s| format!("{s:016x}")).unwrap_or_else(|| "-".into()),
                    format!("{:.2}", 100.0 * r.micro_p),
                    format!("{:.2}", 100.0 * r.micro_r),
                    f1,
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
                + "\n"
        };
        let mut out = line(header.to_vec());
        for row in &body {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        out.push_str("Scores are percentages. Mean rows average the per-seed runs; ± is the sample standard deviation.\n");
        out
    }
}

pub fn parse_variants<S: AsRef<str>>(names: &[S]) -> Result<Vec<Variant>, ConfigError> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

/// Replicate seeds shared by every variant, so rows are paired by seed.
pub fn replicate_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|r| derive_seed(&[base, ABLATION_STREAM, r])).collect()
}

pub fn run_ablation(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<AblationTable, PipelineError> {
    cfg.validate()?;
    if variants.is_empty() {
        return Ok(AblationTable::default());
    }
    let inputs = Inputs::load(cfg)?;
    run_ablation_with(cfg, &inputs, variants)
}

pub fn run_ablation_with(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    variants: &[Variant],
) -> Result<AblationTable, PipelineError> {
    let seeds = replicate_seeds(cfg.seed, cfg.ablation.seeds);
    let mut table = AblationTable::default();
    for &v in variants {
        let mut runs = Vec::new();
        for &s in &seeds {
            let mut c = cfg.with_variant(v);
            c.seed = s;
            let run = run_with(&c, inputs)?;
            runs.push(AblationRow {
                variant: v.name().into(),
                kind: RowKind::Run,
                k: cfg.k(),
                seed: Some(s),
                n_runs: 1,
                micro_p: run.eval.micro_p,
                micro_r: run.eval.micro_r,
                micro_f1: run.eval.micro_f1,
                f1_std: None,
                config_fingerprint: run.eval.config_fingerprint,
            });
        }
        if runs.is_empty() {
            continue;
        }
        let col = |f: fn(&AblationRow) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let f1s = col(|r| r.micro_f1);
        let mean_row = AblationRow {
            variant: v.name().into(),
            kind: RowKind::Mean,
            k: cfg.k(),
            seed: None,
            n_runs: runs.len(),
            micro_p: mean(&col(|r| r.micro_p)),
            micro_r: mean(&col(|r| r.micro_r)),
            micro_f1: mean(&f1s),
            f1_std: Some(sample_std(&f1s)),
            config_fingerprint: cfg.with_variant(v).fingerprint(),
        };
        table.rows.extend(runs);
        table.rows.push(mean_row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_variant_fails_before_work() {
        assert!(parse_variants(&["full", "w/o EVERYTHING"]).is_err());
        assert_eq!(parse_variants(&["full", "w/o ALL"]).unwrap().len(), 2);
    }

    #[test]
    fn empty_request_is_empty_table() {
        let t = run_ablation(&ExperimentConfig::default(), &[]).unwrap();
        assert!(t.rows.is_empty());
        assert!(t.to_text().lines().count() >= 1);
    }

    #[test]
    fn std_and_text_layout() {
        assert_eq!(sample_std(&[1.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        let t = AblationTable {
            rows: vec![AblationRow {
                variant: "w/o ALL".into(),
                kind: RowKind::Mean,
                k: 8,
                seed: None,
                n_runs: 3,
                micro_p: 0.5,
                micro_r: 0.5,
                micro_f1: 0.5,
                f1_std: Some(0.01),
                config_fingerprint: "x".into(),
            }],
        };
        assert!(t.to_text().contains("50.00 ± 1.00"));
        assert_eq!(t.to_csv().lines().count(), 2);
        assert_eq!(t.mean_f1(Variant::WithoutAll), Some(0.5));
    }
}
