//! Loss functions: masked-span reconstruction, span-level contrastive loss,
//! their weighted combination, and the fine-tuning classification loss.
//!
//! Each loss has a plain-value form (used for reporting and as a reference)
//! and a tape form (used for training) built from the same formula.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Span;

use crate::neuralcore::tape::{dot, log_sum_exp, softplus, Tape, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no masked positions; the reconstruction loss is undefined")]
    NoMaskedPositions,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{0} targets for {1} logit rows")]
    CountMismatch(usize, usize),
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, LossError> {
    if u.len() != v.len() {
        return Err(LossError::DimMismatch(u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(LossError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MslmNormalization {
    /// Mean over masked positions.
    #[default]
    MaskedCount,
    /// Sum divided by the maximum sequence length γ.
    Gamma,
}

/// Reconstruction loss from per-masked-position vocabulary logits.
/// `gamma` is only read under [`MslmNormalization::Gamma`].
pub fn mslm_loss(
    logits: &[Vec<f64>],
    targets: &[usize],
    normalization: MslmNormalization,
    gamma: usize,
) -> Result<f64, LossError> {
    if logits.is_empty() {
        return Err(LossError::NoMaskedPositions);
    }
    if logits.len() != targets.len() {
        return Err(LossError::CountMismatch(targets.len(), logits.len()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        if t >= row.len() {
            return Err(LossError::TargetOutOfRange {
                target: t,
                classes: row.len(),
            });
        }
        total += log_sum_exp(row) - row[t];
    }
    let denom = match normalization {
        MslmNormalization::MaskedCount => logits.len(),
        MslmNormalization::Gamma => gamma.max(1),
    };
    Ok((total / denom as f64).max(0.0))
}

/// Anchor, positive and negative span embeddings with a temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveTriplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub tau: f64,
}

/// `−log(e^{s_p/τ} / (e^{s_p/τ} + e^{s_n/τ}))`, which equals
/// `softplus((s_n − s_p)/τ)`.
pub fn scl_from_sims(s_pos: f64, s_neg: f64, tau: f64) -> Result<f64, LossError> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(LossError::InvalidTemperature(tau));
    }
    Ok(softplus((s_neg - s_pos) / tau))
}

pub fn scl_loss(t: &ContrastiveTriplet) -> Result<f64, LossError> {
    let sp = cosine_sim(&t.anchor, &t.positive)?;
    let sn = cosine_sim(&t.anchor, &t.negative)?;
    scl_from_sims(sp, sn, t.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn is_null(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0
    }
}

pub fn pretrain_loss(l_mslm: f64, l_scl: f64, w: LossWeights) -> f64 {
    w.lambda1 * l_mslm + w.lambda2 * l_scl
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

pub const PROB_EPS: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a gold probability was clamped to [`PROB_EPS`].
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// `Σ_i −log p_i[gold_i]` (or its mean). Gold probabilities below
/// [`PROB_EPS`] are clamped and counted.
pub fn finetune_loss(probs: &[Vec<f64>], gold: &[usize], reduction: Reduction) -> Result<f64, LossError> {
    if probs.len() != gold.len() {
        return Err(LossError::CountMismatch(gold.len(), probs.len()));
    }
    let mut total = 0.0;
    for (p, &g) in probs.iter().zip(gold) {
        let Some(&pg) = p.get(g) else {
            return Err(LossError::TargetOutOfRange {
                target: g,
                classes: p.len(),
            });
        };
        let pg = if pg < PROB_EPS {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            PROB_EPS
        } else {
            pg
        };
        total -= pg.ln();
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean if probs.is_empty() => 0.0,
        Reduction::Mean => total / probs.len() as f64,
    })
}

/// Tape form of [`scl_loss`] on pooled span vectors.
pub fn scl_on_tape(tape: &mut Tape, anchor: Var, positive: Var, negative: Var, tau: f64) -> Var {
    let sp = tape.cosine(anchor, positive);
    let sn = tape.cosine(anchor, negative);
    let d = tape.sub(sn, sp);
    let d = tape.scale(d, 1.0 / tau);
    tape.softplus(d)
}

/// Longest negative span drawn for the contrastive loss.
pub const MAX_NEGATIVE_LEN: usize = 4;

/// Uniform draw over every contiguous span of length 1 to
/// [`MAX_NEGATIVE_LEN`] in a sentence of `len` tokens that does not overlap
/// `positive`. `None` when no such span exists.
pub fn sample_negative_span<R: Rng + ?Sized>(len: usize, positive: Span, rng: &mut R) -> Option<Span> {
    let candidates: Vec<Span> = (1..=MAX_NEGATIVE_LEN.min(len))
        .flat_map(|w| (0..=len - w).map(move |s| Span::new(s, s + w)))
        .filter(|s| !s.overlaps(&positive))
        .collect();
    candidates.choose(rng).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent reference: explicit softmax then −log p.
    fn naive_ce(logits: &[f64], target: usize) -> f64 {
        let exps: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let z: f64 = exps.iter().sum();
        -(exps[target] / z).ln()
    }

    #[test]
    fn cosine_cases() {
        let u = [1.0, 2.0, -0.5];
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap().abs() < 1e-12);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_sim(&u, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), Err(LossError::ZeroNorm));
        assert_eq!(cosine_sim(&[1.0], &[1.0, 1.0]), Err(LossError::DimMismatch(1, 2)));
    }

    #[test]
    fn mslm_uniform_and_certain() {
        let logits = vec![vec![0.0; 50]; 3];
        let l = mslm_loss(&logits, &[0, 7, 49], MslmNormalization::MaskedCount, 0).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-9);
        // ln(1 + (V-1)e^-20) stays below 1e-8 only for V <= 5
        let mut row = vec![0.0; 4];
        row[3] = 20.0;
        let l = mslm_loss(&[row], &[3], MslmNormalization::MaskedCount, 0).unwrap();
        assert!(l < 1e-8);
        assert_eq!(
            mslm_loss(&[], &[], MslmNormalization::MaskedCount, 0),
            Err(LossError::NoMaskedPositions)
        );
    }

    #[test]
    fn mslm_matches_naive_reference() {
        let logits = vec![vec![0.3, -1.2, 2.0, 0.0], vec![1.5, 1.4, -0.7, 0.2]];
        let targets = [2, 1];
        let expected = (naive_ce(&logits[0], 2) + naive_ce(&logits[1], 1)) / 2.0;
        let got = mslm_loss(&logits, &targets, MslmNormalization::MaskedCount, 0).unwrap();
        assert!((got - expected).abs() < 1e-9);
        let g = mslm_loss(&logits, &targets, MslmNormalization::Gamma, 8).unwrap();
        assert!((g - expected * 2.0 / 8.0).abs() < 1e-9);
    }

    #[test]
    fn scl_identities() {
        let a = vec![0.2, -0.4, 1.0];
        let p = vec![1.0, 0.3, 0.1];
        for tau in [0.07, 1.0, 10.0] {
            let t = ContrastiveTriplet {
                anchor: a.clone(),
                positive: p.clone(),
                negative: p.clone(),
                tau,
            };
            assert!((scl_loss(&t).unwrap() - 2f64.ln()).abs() < 1e-9);
        }
        let l = scl_from_sims(1.0, -1.0, 1.0).unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-6);
        assert!((l - 0.126928).abs() < 1e-6);
        assert!(matches!(
            scl_from_sims(0.0, 0.0, 0.0),
            Err(LossError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn scl_flattens_to_ln2_with_temperature() {
        let mut prev = f64::INFINITY;
        for tau in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let gap = (scl_from_sims(0.9, -0.3, tau).unwrap() - 2f64.ln()).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn pretrain_combination() {
        let w0 = LossWeights { lambda1: 0.0, lambda2: 0.0 };
        assert_eq!(pretrain_loss(3.0, 2.0, w0), 0.0);
        let w1 = LossWeights { lambda1: 1.0, lambda2: 0.0 };
        assert_eq!(pretrain_loss(3.0, 2.0, w1), 3.0);
        let w = LossWeights { lambda1: 0.5, lambda2: 2.0 };
        assert_eq!(pretrain_loss(3.0, 2.0, w), 5.5);
    }

    #[test]
    fn finetune_cases() {
        let n = 5;
        let probs = vec![vec![1.0 / 42.0; 42]; n];
        let gold = vec![3; n];
        let l = finetune_loss(&probs, &gold, Reduction::Sum).unwrap();
        assert!((l - n as f64 * 42f64.ln()).abs() < 1e-9);
        assert!((42f64.ln() - 3.7377).abs() < 1e-4);
        let onehot = vec![vec![0.0, 1.0, 0.0]; 2];
        assert_eq!(finetune_loss(&onehot, &[1, 1], Reduction::Sum).unwrap(), 0.0);

        let hand = vec![vec![0.7, 0.2, 0.1], vec![0.25, 0.25, 0.5], vec![0.05, 0.9, 0.05]];
        let gold = [0, 2, 1];
        let reference = -(0.7f64.ln()) - 0.5f64.ln() - 0.9f64.ln();
        assert!((finetune_loss(&hand, &gold, Reduction::Sum).unwrap() - reference).abs() < 1e-9);
        assert!(
            (finetune_loss(&hand, &gold, Reduction::Mean).unwrap() - reference / 3.0).abs() < 1e-9
        );
    }

    #[test]
    fn finetune_clamps_zero_probability() {
        let before = clamp_events();
        let l = finetune_loss(&[vec![1.0, 0.0]], &[1], Reduction::Sum).unwrap();
        assert!((l + PROB_EPS.ln()).abs() < 1e-9);
        assert!(clamp_events() > before);
    }

    #[test]
    fn tape_scl_matches_value_form() {
        let a = vec![0.3, -0.2, 0.9, 0.1];
        let p = vec![0.5, 0.1, 0.4, -0.3];
        let n = vec![-0.6, 0.8, 0.05, 0.2];
        let mut t = Tape::new();
        let va = t.input(crate::neuralcore::tape::Mat::from_vec(1, 4, a.clone()));
        let vp = t.input(crate::neuralcore::tape::Mat::from_vec(1, 4, p.clone()));
        let vn = t.input(crate::neuralcore::tape::Mat::from_vec(1, 4, n.clone()));
        let l = scl_on_tape(&mut t, va, vp, vn, 0.07);
        let reference = scl_loss(&ContrastiveTriplet {
            anchor: a,
            positive: p,
            negative: n,
            tau: 0.07,
        })
        .unwrap();
        assert!((t.scalar(l) - reference).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mslm_equals_naive_on_random_fixtures(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 1..6),
            seed in 0usize..1000,
        ) {
            let targets: Vec<usize> = (0..rows.len()).map(|i| (seed + 7 * i) % 6).collect();
            let reference: f64 = rows.iter().zip(&targets).map(|(r, &t)| naive_ce(r, t)).sum::<f64>()
                / rows.len() as f64;
            let got = mslm_loss(&rows, &targets, MslmNormalization::MaskedCount, 0).unwrap();
            prop_assert!((got - reference).abs() < 1e-9);
        }

        #[test]
        fn scl_monotone_in_similarities(sp in -1.0f64..0.99, sn in -0.99f64..1.0, d in 0.001f64..0.01, tau in 0.05f64..5.0) {
            let base = scl_from_sims(sp, sn, tau).unwrap();
            prop_assert!(scl_from_sims(sp + d, sn, tau).unwrap() < base);
            prop_assert!(scl_from_sims(sp, sn + d, tau).unwrap() > base);
        }

        #[test]
        fn scl_invariant_to_positive_rescaling(
            a in proptest::collection::vec(0.1f64..2.0, 4),
            p in proptest::collection::vec(-2.0f64..2.0, 4),
            n in proptest::collection::vec(-2.0f64..2.0, 4),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(dot(&p, &p) > 1e-3 && dot(&n, &n) > 1e-3);
            let t = ContrastiveTriplet { anchor: a.clone(), positive: p.clone(), negative: n.clone(), tau: 0.5 };
            let scaled = ContrastiveTriplet {
                anchor: a.iter().map(|x| x * c).collect(),
                positive: p.iter().map(|x| x * c).collect(),
                negative: n.iter().map(|x| x * c).collect(),
                tau: 0.5,
            };
            prop_assert!((scl_loss(&t).unwrap() - scl_loss(&scaled).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn pretrain_is_bilinear(l1 in 0.0f64..10.0, l2 in 0.0f64..10.0, a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..4.0) {
            let w = LossWeights { lambda1: a, lambda2: b };
            let wc = LossWeights { lambda1: a * c, lambda2: b * c };
            prop_assert!((pretrain_loss(l1, l2, wc) - c * pretrain_loss(l1, l2, w)).abs() < 1e-9);
            prop_assert!((pretrain_loss(l1 * c, l2 * c, w) - c * pretrain_loss(l1, l2, w)).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_spans_avoid_positive() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pos = Span::new(2, 4);
        let mut lens = [0usize; MAX_NEGATIVE_LEN + 1];
        for _ in 0..2000 {
            let s = sample_negative_span(9, pos, &mut rng).unwrap();
            assert!(!s.overlaps(&pos) && s.end <= 9 && !s.is_empty());
            lens[s.len()] += 1;
        }
        assert!(lens[1..].iter().all(|&c| c > 0));
        assert_eq!(sample_negative_span(2, Span::new(0, 2), &mut rng), None);
        assert_eq!(sample_negative_span(3, Span::new(1, 2), &mut rng).map(|s| s.len()), Some(1));
    }
}
