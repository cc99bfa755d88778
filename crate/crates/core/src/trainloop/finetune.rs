use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::{OptimizerConfig, OptimizerState};
use super::{check_finite, EpochRecord, Stage, StepRecord, TrainError, TrainReport};
use crate::corpus::Dataset;
use crate::evalkit::{micro_prf, predict};
use crate::neuralcore::tape::Tape;
use crate::neuralcore::{sequence_ids, Model, Vocabulary, PREFIX_LEN};
use crate::objectives::Reduction;
use crate::seed::derive_seed;

const SHUFFLE_TAG: u64 = 0x7368_7566;
const DROP_TAG: u64 = 0x6674_6472;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub reduction: Reduction,
    pub optimizer: OptimizerConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            batch_size: 16,
            reduction: Reduction::Mean,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Resumable fine-tuning state after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneState {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

impl FinetuneState {
    pub fn fresh(model: Model, cfg: &FinetuneConfig) -> Self {
        let n = model.param_count();
        FinetuneState {
            model,
            optimizer: OptimizerState::new(cfg.optimizer, n),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Best-validation model, or the final one without a validation split.
    pub selected: Model,
    pub state: FinetuneState,
    pub report: TrainReport,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
}

pub fn finetune(
    model: Model,
    vocab: &Vocabulary,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome, TrainError> {
    finetune_resume(FinetuneState::fresh(model, cfg), vocab, train, val, cfg, seed, cfg.epochs)
}

/// Continue from `state` until `until_epoch` epochs are complete. Model
/// selection only sees the epochs run by this call.
pub fn finetune_resume(
    mut state: FinetuneState,
    vocab: &Vocabulary,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &FinetuneConfig,
    seed: u64,
    until_epoch: usize,
) -> Result<FinetuneOutcome, TrainError> {
    let started = Instant::now();
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus("fine-tuning set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    cfg.optimizer.validate().map_err(TrainError::Config)?;
    let schema = &train.schema;
    if state.model.config.n_relations != schema.relations.len() {
        return Err(TrainError::Config(format!(
            "model has {} relation outputs, schema has {}",
            state.model.config.n_relations,
            schema.relations.len()
        )));
    }
    let encoded: Vec<(Vec<usize>, usize)> = train
        .instances
        .iter()
        .map(|inst| {
            let gold = schema.relation_index(&inst.relation).expect("dataset validated against schema");
            (sequence_ids(vocab, &inst.tokens), gold)
        })
        .collect();
    let n = encoded.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs.max(until_epoch) * per_epoch;
    let n_params = state.model.param_count();

    let mut report = TrainReport {
        seed,
        ..Default::default()
    };
    let mut best: Option<(usize, f64, Model)> = None;

    while state.epoch < until_epoch {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SHUFFLE_TAG, epoch as u64])));
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = state.optimizer.step_count as usize;
            let mut drop_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[seed, DROP_TAG, epoch as u64, bi as u64]));
            let mut tape = Tape::new();
            let b = state.model.bind(&mut tape);
            let mut terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let inst = &train.instances[i];
                let (ids, gold) = &encoded[i];
                let h = state.model.encode(&mut tape, &b, ids, Some(&mut drop_rng))?;
                let r = state.model.representation(
                    &mut tape,
                    h,
                    inst.subj_span.shifted(PREFIX_LEN),
                    inst.obj_span.shifted(PREFIX_LEN),
                )?;
                let z = state.model.class_logits(&mut tape, &b, r);
                terms.push(tape.cross_entropy(z, &[*gold]));
            }
            let total = tape.sum(&terms);
            let root = match cfg.reduction {
                Reduction::Sum => total,
                Reduction::Mean => tape.scale(total, 1.0 / terms.len() as f64),
            };
            let loss = tape.scalar(root);
            check_finite(loss, Stage::Finetune, step)?;
            let mut grads = tape.backward(root, n_params);
            if !grads.iter().all(|g| g.is_finite()) {
                return Err(TrainError::NonFinite {
                    stage: Stage::Finetune,
                    step,
                });
            }
            state.optimizer.clip(&mut grads);
            let lr = cfg.optimizer.lr_at(step, total_steps);
            state.optimizer.step(&mut state.model.params.data, &grads, lr);
            epoch_loss += loss;
            report.steps.push(StepRecord {
                step,
                stage: Stage::Finetune,
                l_mslm: None,
                l_scl: None,
                l_total: None,
                l_finetune: Some(loss),
            });
        }
        state.epoch += 1;
        let val_f1 = match val {
            Some(v) if !v.is_empty() => {
                let pred = predict(&state.model, vocab, v)?;
                let pred: Vec<&str> = pred.iter().map(|&p| schema.relations[p].as_str()).collect();
                let gold: Vec<&str> = v.instances.iter().map(|i| i.relation.as_str()).collect();
                let r = micro_prf(&gold, &pred, schema.none_label.as_deref())
                    .expect("equal lengths by construction");
                Some(r.micro_f1)
            }
            _ => None,
        };
        if let Some(f1) = val_f1 {
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                best = Some((state.epoch, f1, state.model.clone()));
            }
        }
        report.epochs.push(EpochRecord {
            epoch: state.epoch,
            mean_loss: epoch_loss / per_epoch as f64,
            val_micro_f1: val_f1,
        });
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    let (selected, best_epoch, best_val_f1) = match best {
        Some((e, f, m)) => (m, Some(e), Some(f)),
        None => (state.model.clone(), None, None),
    };
    Ok(FinetuneOutcome {
        selected,
        state,
        report,
        best_epoch,
        best_val_f1,
    })
}
