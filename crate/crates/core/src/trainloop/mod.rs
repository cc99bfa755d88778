//! Pre-training (MSLM + SCL), fine-tuning, the optimizer and checkpoints.

mod checkpoint;
mod finetune;
mod optimizer;
mod pretrain;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use finetune::{finetune, finetune_resume, FinetuneConfig, FinetuneOutcome, FinetuneState};
pub use optimizer::{OptimizerConfig, OptimizerState};
pub use pretrain::{pretrain, PretrainConfig, PretrainExample, Schedule, TripletSources};

use serde::{Deserialize, Serialize};

use crate::corpus::RelationSchema;
use crate::neuralcore::{Model, ModelError, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("nothing to train on: {0}")]
    EmptyCorpus(&'static str),
    #[error("non-finite {stage} loss at step {step}")]
    NonFinite { stage: Stage, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("masking: {0}")]
    Mask(#[from] crate::maskgen::MaskError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trained encoder together with the vocabulary and schema it was
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    pub model: Model,
    pub vocab: Vocabulary,
    pub schema: RelationSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Joint,
    Mslm,
    Scl,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Joint => "joint",
            Stage::Mslm => "mslm",
            Stage::Scl => "scl",
            Stage::Finetune => "finetune",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_mslm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_scl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_finetune: Option<f64>,
}

impl StepRecord {
    /// The loss this step optimized.
    pub fn loss(&self) -> f64 {
        self.l_total.or(self.l_finetune).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_micro_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.steps.iter().map(StepRecord::loss).collect()
    }

    /// One JSON object per logged step.
    pub fn to_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Everything except the per-step records.
    pub fn summary_json(&self) -> serde_json::Value {
        let first = self.steps.first().map(StepRecord::loss);
        let last = self.steps.last().map(StepRecord::loss);
        serde_json::json!({
            "seed": self.seed,
            "n_steps": self.steps.len(),
            "first_loss": first,
            "final_loss": last,
            "epochs": self.epochs,
            "wall_time_secs": self.wall_time_secs,
            "checkpoint": self.checkpoint,
            "warnings": self.warnings,
        })
    }
}

fn check_finite(loss: f64, stage: Stage, step: usize) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite { stage, step })
    }
}
