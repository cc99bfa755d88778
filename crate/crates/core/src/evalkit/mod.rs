//! Micro precision/recall/F1, model evaluation and the ablation harness.

mod ablation;
mod metrics;

pub use ablation::{parse_variants, run_ablation, run_ablation_with, AblationRow, AblationTable, RowKind};
pub use metrics::{f1, micro_prf, Counts, EvalResult};

use crate::corpus::Dataset;
use crate::neuralcore::{predict_instance, Model, ModelError, Vocabulary};
use crate::trainloop::RelationModel;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{gold} gold labels but {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("schema fingerprint mismatch: model {model}, data {data}")]
    Fingerprint { model: String, data: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Predicted relation index for every instance of `data`.
pub fn predict(model: &Model, vocab: &Vocabulary, data: &Dataset) -> Result<Vec<usize>, ModelError> {
    data.instances
        .iter()
        .map(|inst| predict_instance(model, vocab, inst).map(|p| argmax(&p)))
        .collect()
}

pub fn evaluate(rm: &RelationModel, data: &Dataset) -> Result<EvalResult, EvalError> {
    let (m, d) = (rm.schema.fingerprint(), data.schema.fingerprint());
    if m != d {
        return Err(EvalError::Fingerprint { model: m, data: d });
    }
    let pred = predict(&rm.model, &rm.vocab, data)?;
    let pred: Vec<&str> = pred.iter().map(|&p| rm.schema.relations[p].as_str()).collect();
    let gold: Vec<&str> = data.instances.iter().map(|i| i.relation.as_str()).collect();
    micro_prf(&gold, &pred, rm.schema.none_label.as_deref())
}
