use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::{OptimizerConfig, OptimizerState};
use super::{check_finite, Stage, StepRecord, TrainError, TrainReport};
use crate::corpus::{Provenance, RelationInstance, Span};
use crate::genkit::{find_tokens, find_tokens_avoiding, ExplanationRecord};
use crate::maskgen::{plan_mask, tag_spans, MaskConfig};
use crate::neuralcore::tape::{Tape, Var};
use crate::neuralcore::{sequence_ids, tokenize, verbalize_relation, Bound, Model, Vocabulary, PREFIX_LEN};
use crate::objectives::{sample_negative_span, scl_on_tape, LossWeights, MslmNormalization};
use crate::seed::derive_seed;

const ORDER_TAG: u64 = 0x6f72_6465_72;
const MASK_TAG: u64 = 0x6d61_736b;
const NEG_TAG: u64 = 0x6e65_67;
const DROP_TAG: u64 = 0x6472_6f70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Both objectives in every step.
    #[default]
    Joint,
    /// MSLM for the first half of the steps, SCL for the second.
    Sequential,
}

/// Which corpora may contribute contrastive triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletSources {
    pub golden: bool,
    pub synthetic: bool,
    pub explanation: bool,
}

impl Default for TripletSources {
    fn default() -> Self {
        TripletSources {
            golden: true,
            synthetic: true,
            explanation: true,
        }
    }
}

impl TripletSources {
    fn allows(&self, p: Provenance) -> bool {
        match p {
            Provenance::Golden => self.golden,
            Provenance::Synthetic => self.synthetic,
            Provenance::Explanation => self.explanation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub tau: f64,
    pub weights: LossWeights,
    pub normalization: MslmNormalization,
    pub mask: MaskConfig,
    pub triplet_sources: TripletSources,
    pub optimizer: OptimizerConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 300,
            batch_size: 16,
            schedule: Schedule::Joint,
            tau: 0.07,
            weights: LossWeights::default(),
            normalization: MslmNormalization::MaskedCount,
            mask: MaskConfig::default(),
            triplet_sources: TripletSources::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// One pre-training sentence with its annotated spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainExample {
    pub tokens: Vec<String>,
    pub entities: Vec<Span>,
    pub relation_span: Option<Span>,
    pub relation: String,
    pub source: Provenance,
}

impl PretrainExample {
    /// Spans reaching past `max_tokens` are dropped along with the tail.
    pub fn from_instance(inst: &RelationInstance, max_tokens: usize) -> Self {
        let keep = |s: Span| (s.end <= max_tokens).then_some(s);
        PretrainExample {
            tokens: inst.tokens.iter().take(max_tokens).cloned().collect(),
            entities: [inst.subj_span, inst.obj_span].into_iter().filter_map(keep).collect(),
            relation_span: inst.relation_span.and_then(keep),
            relation: inst.relation.clone(),
            source: inst.provenance,
        }
    }

    /// Subject, object and relation phrase of the source instance are
    /// located by first exact token match in the explanation text.
    pub fn from_explanation(rec: &ExplanationRecord, max_tokens: usize) -> Self {
        let mut tokens = tokenize(&rec.text);
        tokens.truncate(max_tokens);
        let src = &rec.source;
        let subj = find_tokens(&tokens, &tokenize(&src.subject_text()), 0);
        let obj = find_tokens_avoiding(&tokens, &tokenize(&src.object_text()), subj.as_slice());
        let entities: Vec<Span> = subj.into_iter().chain(obj).collect();
        let relation_span = src
            .relation_phrase()
            .and_then(|p| find_tokens_avoiding(&tokens, &tokenize(&p), &entities));
        PretrainExample {
            tokens,
            entities,
            relation_span,
            relation: src.relation.clone(),
            source: Provenance::Explanation,
        }
    }
}

struct Sampler<'a> {
    n: usize,
    seed: u64,
    epoch: Option<u64>,
    order: Vec<usize>,
    resample: bool,
    examples: &'a [PretrainExample],
}

impl<'a> Sampler<'a> {
    /// Example index and its mask seed at global position `pos`.
    fn at(&mut self, pos: usize) -> (usize, u64) {
        let epoch = (pos / self.n) as u64;
        if self.epoch != Some(epoch) {
            let mut order: Vec<usize> = (0..self.n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, ORDER_TAG, epoch])));
            self.order = order;
            self.epoch = Some(epoch);
        }
        let idx = self.order[pos % self.n];
        let mask_epoch = if self.resample { epoch } else { 0 };
        (idx, derive_seed(&[self.seed, MASK_TAG, mask_epoch, idx as u64]))
    }
}

struct StepLosses {
    mslm: Option<(Var, f64)>,
    scl: Option<(Var, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn build_step(
    model: &Model,
    tape: &mut Tape,
    b: &Bound,
    vocab: &Vocabulary,
    batch: &[(usize, u64)],
    examples: &[PretrainExample],
    cfg: &PretrainConfig,
    stage: Stage,
    step: usize,
    seed: u64,
) -> Result<StepLosses, TrainError> {
    let use_mslm = cfg.weights.lambda1 > 0.0 && stage != Stage::Scl;
    let use_scl = cfg.weights.lambda2 > 0.0 && stage != Stage::Mslm;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, DROP_TAG, step as u64]));
    let max_len = model.config.encoder.max_len;

    let mut ce_terms = Vec::new();
    let mut masked_total = 0usize;
    let mut sentences = 0usize;
    let mut scl_terms = Vec::new();
    let mut anchors: BTreeMap<String, Var> = BTreeMap::new();

    for (j, &(idx, mask_seed)) in batch.iter().enumerate() {
        let ex = &examples[idx];
        if ex.tokens.is_empty() {
            continue;
        }
        let ids = sequence_ids(vocab, &ex.tokens);
        if use_mslm {
            let tags = tag_spans(ex.tokens.len(), &ex.entities, ex.relation_span);
            let plan = plan_mask(&ids[PREFIX_LEN..], &tags, &cfg.mask, Vocabulary::MASK_ID, mask_seed)?;
            let positions: Vec<usize> = plan.masked.masked_positions().iter().map(|p| p + PREFIX_LEN).collect();
            sentences += 1;
            if !positions.is_empty() {
                let mut input = ids[..PREFIX_LEN].to_vec();
                input.extend_from_slice(&plan.masked.input_ids);
                let h = model.encode(tape, b, &input, Some(&mut drop_rng))?;
                let logits = model.mslm_logits(tape, b, h, &positions);
                ce_terms.push(tape.cross_entropy(logits, &plan.masked.target_ids()));
                masked_total += positions.len();
            }
        }
        if use_scl && cfg.triplet_sources.allows(ex.source) {
            let Some(pos) = ex.relation_span else { continue };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, NEG_TAG, step as u64, j as u64]));
            let Some(neg) = sample_negative_span(ex.tokens.len(), pos, &mut rng) else { continue };
            let anchor = match anchors.get(&ex.relation) {
                Some(&a) => a,
                None => {
                    let mut label = verbalize_relation(&ex.relation);
                    label.truncate(max_len - PREFIX_LEN);
                    let aids = sequence_ids(vocab, &label);
                    let h = model.encode(tape, b, &aids, Some(&mut drop_rng))?;
                    let span = if aids.len() > PREFIX_LEN {
                        Span::new(PREFIX_LEN, aids.len())
                    } else {
                        Span::new(0, 1)
                    };
                    let a = model.pool(tape, h, span)?;
                    anchors.insert(ex.relation.clone(), a);
                    a
                }
            };
            let h = model.encode(tape, b, &ids, Some(&mut drop_rng))?;
            let hp = model.pool(tape, h, pos.shifted(PREFIX_LEN))?;
            let hn = model.pool(tape, h, neg.shifted(PREFIX_LEN))?;
            scl_terms.push(scl_on_tape(tape, anchor, hp, hn, cfg.tau));
        }
    }

    let mslm = if ce_terms.is_empty() {
        None
    } else {
        let total = tape.sum(&ce_terms);
        let denom = match cfg.normalization {
            MslmNormalization::MaskedCount => masked_total as f64,
            MslmNormalization::Gamma => (max_len * sentences) as f64,
        };
        let l = tape.scale(total, 1.0 / denom);
        Some((l, tape.scalar(l)))
    };
    let scl = if scl_terms.is_empty() {
        None
    } else {
        let total = tape.sum(&scl_terms);
        let l = tape.scale(total, 1.0 / scl_terms.len() as f64);
        Some((l, tape.scalar(l)))
    };
    Ok(StepLosses { mslm, scl })
}

/// Optimize `λ1·L_mslm + λ2·L_scl` over `examples` for `cfg.steps` updates.
pub fn pretrain(
    model: &mut Model,
    vocab: &Vocabulary,
    examples: &[PretrainExample],
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<TrainReport, TrainError> {
    let started = Instant::now();
    if examples.iter().all(|e| e.tokens.is_empty()) {
        return Err(TrainError::EmptyCorpus("pre-training corpus has no sentences"));
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    cfg.optimizer.validate().map_err(TrainError::Config)?;
    let mut report = TrainReport {
        seed,
        ..Default::default()
    };
    if cfg.weights.is_null() {
        report.warnings.push("lambda1 and lambda2 are both zero; pre-training skipped".into());
        return Ok(report);
    }
    let mut opt = OptimizerState::new(cfg.optimizer, model.param_count());
    let mut sampler = Sampler {
        n: examples.len(),
        seed,
        epoch: None,
        order: Vec::new(),
        resample: cfg.mask.resample_each_epoch,
        examples,
    };
    debug_assert_eq!(sampler.examples.len(), sampler.n);
    let n_params = model.param_count();
    for step in 0..cfg.steps {
        let stage = match cfg.schedule {
            Schedule::Joint => Stage::Joint,
            Schedule::Sequential if step < cfg.steps / 2 => Stage::Mslm,
            Schedule::Sequential => Stage::Scl,
        };
        let batch: Vec<(usize, u64)> = (0..cfg.batch_size).map(|j| sampler.at(step * cfg.batch_size + j)).collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let losses = build_step(model, &mut tape, &b, vocab, &batch, examples, cfg, stage, step, seed)?;
        let mut parts = Vec::new();
        let mut total = 0.0;
        if let Some((v, l)) = losses.mslm {
            parts.push(tape.scale(v, cfg.weights.lambda1));
            total += cfg.weights.lambda1 * l;
        }
        if let Some((v, l)) = losses.scl {
            parts.push(tape.scale(v, cfg.weights.lambda2));
            total += cfg.weights.lambda2 * l;
        }
        if parts.is_empty() {
            continue;
        }
        check_finite(total, stage, step)?;
        let root = tape.sum(&parts);
        let mut grads = tape.backward(root, n_params);
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(TrainError::NonFinite { stage, step });
        }
        opt.clip(&mut grads);
        let lr = cfg.optimizer.lr_at(step, cfg.steps);
        opt.step(&mut model.params.data, &grads, lr);
        report.steps.push(StepRecord {
            step,
            stage,
            l_mslm: losses.mslm.map(|m| m.1),
            l_scl: losses.scl.map(|s| s.1),
            l_total: Some(total),
            l_finetune: None,
        });
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}
