//! Role-conditioned masking for masked span language modeling.
//!
//! Tokens are tagged as relation evidence, entity mention, or other; each
//! role carries its own masking probability, and masks are drawn either per
//! token or once per annotated span.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, Span};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("length mismatch: {ids} token ids but {mask} mask bits")]
    LengthMismatch { ids: usize, mask: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RelationSpan,
    EntitySpan,
    Other,
}

/// Per-token roles plus the annotated segments they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTags {
    pub roles: Vec<Role>,
    segments: Vec<Span>,
}

impl RoleTags {
    /// Tags built directly from roles; every maximal run of one non-other
    /// role is treated as a single segment.
    pub fn from_roles(roles: Vec<Role>) -> Self {
        let mut segments = Vec::new();
        let mut i = 0;
        while i < roles.len() {
            let r = roles[i];
            let mut j = i + 1;
            while j < roles.len() && roles[j] == r {
                j += 1;
            }
            if r != Role::Other {
                segments.push(Span::new(i, j));
            }
            i = j;
        }
        RoleTags { roles, segments }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Contiguous relation/entity segments, sorted by start.
    pub fn segments(&self) -> &[Span] {
        &self.segments
    }
}

/// Tag a sentence of `len` tokens. Relation tags win where a relation span
/// overlaps an entity span.
pub fn tag_spans(len: usize, entities: &[Span], relation: Option<Span>) -> RoleTags {
    let mut roles = vec![Role::Other; len];
    for e in entities {
        for r in &mut roles[e.start.min(len)..e.end.min(len)] {
            *r = Role::EntitySpan;
        }
    }
    if let Some(rel) = relation {
        for r in &mut roles[rel.start.min(len)..rel.end.min(len)] {
            *r = Role::RelationSpan;
        }
    }
    // Segments follow the annotation boundaries so adjacent subject and
    // object spans stay separate draws.
    let mut segments: Vec<Span> = Vec::new();
    if let Some(rel) = relation {
        segments.push(Span::new(rel.start.min(len), rel.end.min(len)));
    }
    for e in entities {
        // entity tokens not covered by the relation span
        let mut i = e.start.min(len);
        let end = e.end.min(len);
        while i < end {
            if roles[i] != Role::EntitySpan {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < end && roles[j] == Role::EntitySpan {
                j += 1;
            }
            segments.push(Span::new(i, j));
            i = j;
        }
    }
    segments.retain(|s| !s.is_empty());
    segments.sort();
    RoleTags { roles, segments }
}

pub fn tag_roles(inst: &RelationInstance) -> RoleTags {
    tag_spans(
        inst.tokens.len(),
        &[inst.subj_span, inst.obj_span],
        inst.relation_span,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerToken,
    #[default]
    PerSpan,
}

/// Masking configuration (`[mask]` section of the experiment file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub granularity: Granularity,
    pub p_relation: f64,
    pub p_entity: f64,
    pub p_other: f64,
    /// Uniform BERT-style masking at `bert_rate`, per token.
    pub bert_style: bool,
    pub bert_rate: f64,
    /// Draw fresh masks every epoch instead of fixing them once.
    pub resample_each_epoch: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            granularity: Granularity::PerSpan,
            p_relation: 0.8,
            p_entity: 0.5,
            p_other: 0.2,
            bert_style: false,
            bert_rate: 0.15,
            resample_each_epoch: true,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        for p in [self.p_relation, self.p_entity, self.p_other, self.bert_rate] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MaskError::InvalidProbability(p));
            }
        }
        Ok(())
    }

    pub fn effective_granularity(&self) -> Granularity {
        if self.bert_style {
            Granularity::PerToken
        } else {
            self.granularity
        }
    }

    pub fn prob_for(&self, role: Role) -> f64 {
        if self.bert_style {
            return self.bert_rate;
        }
        match role {
            Role::RelationSpan => self.p_relation,
            Role::EntitySpan => self.p_entity,
            Role::Other => self.p_other,
        }
    }
}

/// Masking probability per token under the default role rates.
pub fn assign_probs(tags: &RoleTags) -> Vec<f64> {
    assign_probs_with(tags, &MaskConfig::default())
}

pub fn assign_probs_with(tags: &RoleTags, cfg: &MaskConfig) -> Vec<f64> {
    tags.roles.iter().map(|&r| cfg.prob_for(r)).collect()
}

/// Draw mask bits. `PerSpan` uses one Bernoulli draw per annotated segment
/// (at the probability of its first token) and per-token draws elsewhere.
pub fn sample_mask(probs: &[f64], granularity: Granularity, tags: &RoleTags, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match granularity {
        Granularity::PerToken => probs.iter().map(|&p| rng.random::<f64>() < p).collect(),
        Granularity::PerSpan => {
            let mut mask = vec![false; probs.len()];
            let mut seg = tags.segments().iter().peekable();
            let mut i = 0;
            while i < probs.len() {
                if let Some(s) = seg.peek() {
                    if s.start == i {
                        let hit = rng.random::<f64>() < probs[i];
                        let end = s.end.min(probs.len());
                        mask[i..end].iter_mut().for_each(|m| *m = hit);
                        i = end;
                        seg.next();
                        continue;
                    }
                }
                mask[i] = rng.random::<f64>() < probs[i];
                i += 1;
            }
            mask
        }
    }
}

/// Masked input and reconstruction targets for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<usize>,
    /// Original id at masked positions, `None` elsewhere.
    pub targets: Vec<Option<usize>>,
}

impl MaskedSequence {
    pub fn masked_positions(&self) -> Vec<usize> {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|_| i))
            .collect()
    }

    pub fn target_ids(&self) -> Vec<usize> {
        self.targets.iter().filter_map(|t| *t).collect()
    }

    /// Put the targets back at masked positions.
    pub fn unmask(&self) -> Vec<usize> {
        self.input_ids
            .iter()
            .zip(&self.targets)
            .map(|(&i, t)| t.unwrap_or(i))
            .collect()
    }
}

/// Replace each masked token by one sentinel (length-preserving).
pub fn apply_mask(token_ids: &[usize], mask: &[bool], sentinel: usize) -> Result<MaskedSequence, MaskError> {
    if token_ids.len() != mask.len() {
        return Err(MaskError::LengthMismatch {
            ids: token_ids.len(),
            mask: mask.len(),
        });
    }
    let (input_ids, targets) = token_ids
        .iter()
        .zip(mask)
        .map(|(&id, &m)| if m { (sentinel, Some(id)) } else { (id, None) })
        .unzip();
    Ok(MaskedSequence { input_ids, targets })
}

/// Everything sampled for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
    pub masked: MaskedSequence,
}

pub fn plan_mask(
    token_ids: &[usize],
    tags: &RoleTags,
    cfg: &MaskConfig,
    sentinel: usize,
    seed: u64,
) -> Result<MaskPlan, MaskError> {
    let probs = assign_probs_with(tags, cfg);
    let mask = sample_mask(&probs, cfg.effective_granularity(), tags, seed);
    let masked = apply_mask(token_ids, &mask, sentinel)?;
    Ok(MaskPlan {
        probs,
        mask,
        masked,
    })
}
