//! Prompt construction, explanation generation, schema-constrained
//! synthesis and rule-based filtering of generated samples.

mod backend;
mod mock;
mod parse;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use backend::{run_bounded, BackendKind, GenerationBackend, Generator, HttpGenerator, ScriptedGenerator};
pub use mock::MockGenerator;
pub use parse::{
    find_tokens, find_tokens_avoiding, parse_block, parse_synthetic, split_blocks, RawBlock, Rejection,
    SyntheticCandidate,
};
pub use prompt::{
    build_explanation_prompt, build_explanation_prompt_with, build_synthesis_prompt,
    build_synthesis_prompt_with, format_block, EXPLAIN_TEMPLATE, SYNTHESIZE_TEMPLATE,
};

use crate::corpus::{Dataset, RelationInstance};
use crate::neuralcore::tokenize;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GenError {
    #[error("prompt slot `{0}` has no value")]
    MissingSlot(&'static str),
    #[error("relation `{0}` is not in the schema")]
    UnknownRelation(String),
    #[error("exemplar has relation `{found}`, expected `{expected}`")]
    ExemplarMismatch { expected: String, found: String },
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("backend response malformed: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub source: RelationInstance,
    pub text: String,
    pub token_count: usize,
}

impl ExplanationRecord {
    pub fn new(source: RelationInstance, text: String) -> Option<Self> {
        let token_count = tokenize(&text).len();
        (token_count > 0).then_some(ExplanationRecord {
            source,
            text,
            token_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub relation: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationCorpus {
    pub records: Vec<ExplanationRecord>,
    pub failures: Vec<GenerationFailure>,
}

/// Up to `k` explanations per relation, drawn from the first `k`
/// instances of that relation in dataset order.
pub fn generate_explanations(
    train: &Dataset,
    generator: &dyn Generator,
    k: usize,
) -> Result<ExplanationCorpus, GenError> {
    if train.is_empty() {
        return Err(GenError::EmptyInput);
    }
    let mut sources: Vec<&RelationInstance> = Vec::new();
    for relation in &train.schema.relations {
        sources.extend(train.instances.iter().filter(|i| &i.relation == relation).take(k));
    }
    let prompts = sources
        .iter()
        .map(|s| build_explanation_prompt(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut corpus = ExplanationCorpus::default();
    for (src, out) in sources.into_iter().zip(generator.generate_batch(&prompts)) {
        let outcome = out.and_then(|text| {
            ExplanationRecord::new(src.clone(), text.trim().to_string())
                .ok_or_else(|| GenError::Protocol("empty explanation".into()))
        });
        match outcome {
            Ok(r) => corpus.records.push(r),
            Err(e) => corpus.failures.push(GenerationFailure {
                relation: src.relation.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    pub min_tokens: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions { min_tokens: 6 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: String,
    pub requested: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<Rejection, usize>,
    pub shortfall: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub relations: Vec<RelationReport>,
}

impl GenerationReport {
    pub fn total_accepted(&self) -> usize {
        self.relations.iter().map(|r| r.accepted).sum()
    }

    pub fn total_shortfall(&self) -> usize {
        self.relations.iter().map(|r| r.shortfall).sum()
    }

    pub fn rejections(&self) -> BTreeMap<Rejection, usize> {
        let mut out = BTreeMap::new();
        for r in &self.relations {
            for (k, v) in &r.rejected {
                *out.entry(*k).or_insert(0) += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Augmentation {
    pub synthetic: Dataset,
    pub candidates: Vec<SyntheticCandidate>,
    pub report: GenerationReport,
}

/// Case-folded, whitespace-normalized context.
pub fn dedup_key(sentence: &str) -> String {
    tokenize(sentence).join(" ")
}

/// Filter one relation's generator output: claimed relation must match,
/// context must be long enough and not seen before.
pub fn accept_blocks(
    raw: &str,
    golden: &Dataset,
    relation: &str,
    budget: usize,
    opts: &AugmentOptions,
    seen: &mut BTreeSet<String>,
) -> (Vec<RelationInstance>, Vec<SyntheticCandidate>) {
    let mut accepted = Vec::new();
    let mut candidates = Vec::new();
    for block in split_blocks(raw) {
        if accepted.len() >= budget {
            break;
        }
        let mut cand = parse_synthetic(&block, &golden.schema);
        if let Ok(inst) = &cand.outcome {
            let verdict = if inst.relation != relation {
                Some(Rejection::ParseFailure)
            } else if inst.tokens.len() < opts.min_tokens {
                Some(Rejection::TooShort)
            } else if !seen.insert(dedup_key(&inst.sentence())) {
                Some(Rejection::Duplicate)
            } else {
                None
            };
            match verdict {
                Some(r) => cand.outcome = Err(r),
                None => accepted.push(inst.clone()),
            }
        }
        candidates.push(cand);
    }
    (accepted, candidates)
}

/// At most `budget` validated synthetic instances per relation present in
/// `golden`. One request per relation; shortfalls are reported, not refilled.
pub fn augment_dataset(
    golden: &Dataset,
    generator: &dyn Generator,
    budget: usize,
    opts: &AugmentOptions,
) -> Result<Augmentation, GenError> {
    let schema = &golden.schema;
    let mut seen: BTreeSet<String> = golden.instances.iter().map(|i| dedup_key(&i.sentence())).collect();
    let relations: Vec<&String> = schema
        .relations
        .iter()
        .filter(|r| golden.instances.iter().any(|i| &i.relation == *r))
        .collect();
    let mut report = GenerationReport::default();
    let mut synthetic = Vec::new();
    let mut candidates = Vec::new();
    if budget == 0 {
        for r in relations {
            report.relations.push(RelationReport {
                relation: r.clone(),
                ..Default::default()
            });
        }
        return Ok(Augmentation {
            synthetic: Dataset::new(schema.clone(), Vec::new(), "synthetic").expect("empty dataset is valid"),
            candidates,
            report,
        });
    }
    let prompts = relations
        .iter()
        .map(|r| {
            let ex: Vec<RelationInstance> =
                golden.instances.iter().filter(|i| &i.relation == *r).cloned().collect();
            build_synthesis_prompt(schema, r, &ex, budget)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = generator.generate_batch(&prompts);
    for (r, out) in relations.into_iter().zip(outputs) {
        let mut rr = RelationReport {
            relation: r.clone(),
            requested: budget,
            ..Default::default()
        };
        match out {
            Ok(raw) => {
                let (acc, cands) = accept_blocks(&raw, golden, r, budget, opts, &mut seen);
                for c in &cands {
                    if let Some(reason) = c.rejection_reason() {
                        *rr.rejected.entry(reason).or_insert(0) += 1;
                    }
                }
                rr.accepted = acc.len();
                synthetic.extend(acc);
                candidates.extend(cands);
            }
            Err(e) => rr.error = Some(e.to_string()),
        }
        rr.shortfall = budget - rr.accepted;
        report.relations.push(rr);
    }
    let synthetic = Dataset::new(schema.clone(), synthetic, "synthetic")
        .map_err(|e| GenError::Protocol(format!("accepted sample failed validation: {e}")))?;
    Ok(Augmentation {
        synthetic,
        candidates,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, RelationSchema, Span};

    fn schema() -> RelationSchema {
        let types: BTreeSet<String> = ["PERSON", "CITY", "ORG"].iter().map(|s| s.to_string()).collect();
        let mut compat = BTreeMap::new();
        compat.insert(
            "A".to_string(),
            [("PERSON".to_string(), "CITY".to_string())].into_iter().collect(),
        );
        compat.insert("B".to_string(), [("PERSON".to_string(), "ORG".to_string())].into_iter().collect());
        RelationSchema::new(vec!["A".into(), "B".into()], None, types, compat).unwrap()
    }

    const NAMES: &[&str] = &["Ada", "Ben", "Cal", "Dee", "Eli", "Fay", "Gus", "Hal", "Ida", "Jon"];
    const PLACES: &[&str] = &["Oslo", "Rome", "Lima", "Kiev", "Bern", "Baku", "Doha", "Riga", "Nice", "Graz"];

    fn golden(a: usize, b: usize) -> Dataset {
        let mut v = Vec::new();
        for i in 0..a {
            let s = format!("{} was born in the city of {} long ago .", NAMES[i], PLACES[i]);
            v.push(RelationInstance {
                tokens: s.split(' ').map(String::from).collect(),
                subj_span: Span::new(0, 1),
                obj_span: Span::new(6, 7),
                subj_type: "PERSON".into(),
                obj_type: "CITY".into(),
                relation: "A".into(),
                relation_span: Some(Span::new(2, 4)),
                provenance: Provenance::Golden,
            });
        }
        for i in 0..b {
            let s = format!("{} works for Acme{} as a senior engineer .", NAMES[i], i);
            v.push(RelationInstance {
                tokens: s.split(' ').map(String::from).collect(),
                subj_span: Span::new(0, 1),
                obj_span: Span::new(3, 4),
                subj_type: "PERSON".into(),
                obj_type: "ORG".into(),
                relation: "B".into(),
                relation_span: Some(Span::new(1, 3)),
                provenance: Provenance::Golden,
            });
        }
        Dataset::new(schema(), v, "train").unwrap()
    }

    #[test]
    fn explanations_respect_k_per_relation() {
        let g = MockGenerator::new(0);
        let c = generate_explanations(&golden(10, 3), &g, 8).unwrap();
        assert_eq!(c.records.len(), 11);
        assert!(c.failures.is_empty());
        for r in &c.records {
            assert_eq!(r.token_count, tokenize(&r.text).len());
        }
        let sat = generate_explanations(&golden(10, 10), &g, 8).unwrap();
        assert_eq!(sat.records.len(), 16);
        assert_eq!(c, generate_explanations(&golden(10, 3), &g, 8).unwrap());
    }

    #[test]
    fn explanations_report_transport_failures() {
        let g = ScriptedGenerator::with_failures(vec![Ok("fine text".into()), Err("down".into())]);
        let c = generate_explanations(&golden(2, 0), &g, 8).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.failures.len(), 1);
        assert!(matches!(
            generate_explanations(&Dataset::empty(schema(), "x"), &g, 1),
            Err(GenError::EmptyInput)
        ));
    }

    #[test]
    fn augmentation_stays_within_budget() {
        let gold = golden(8, 8);
        let aug = augment_dataset(&gold, &MockGenerator::new(4), 8, &AugmentOptions::default()).unwrap();
        assert!(aug.synthetic.len() <= 16);
        assert!(aug.synthetic.len() > 0);
        for (rel, n) in aug.synthetic.relation_counts() {
            assert!(n <= 8, "{rel} over budget");
        }
        for inst in &aug.synthetic.instances {
            assert!(gold.schema.check_instance(inst).is_ok());
            assert_eq!(inst.provenance, Provenance::Synthetic);
        }
        let merged = crate::corpus::merge(&gold, &aug.synthetic).unwrap();
        assert!(merged.len() <= 2 * 8 * 2);
    }

    #[test]
    fn zero_budget_is_empty() {
        let aug = augment_dataset(&golden(4, 4), &MockGenerator::new(0), 0, &AugmentOptions::default()).unwrap();
        assert!(aug.synthetic.is_empty());
    }

    #[test]
    fn duplicate_context_is_rejected_without_refill() {
        let block = |who: &str| {
            format!("Context: {who} was born in the city of Oslo years ago .\nHead Type: PERSON. Head Entity: {who}.\nTail Type: CITY. Tail Entity: Oslo.\nRelation: A.\n\n")
        };
        let raw = format!("{}{}{}", block("Zed"), block("Zed"), block("Yan"));
        let gold = golden(1, 0);
        let aug = augment_dataset(&gold, &ScriptedGenerator::new([raw]), 3, &AugmentOptions::default()).unwrap();
        assert_eq!(aug.synthetic.len(), 2);
        assert_eq!(aug.report.relations[0].rejected[&Rejection::Duplicate], 1);
        assert_eq!(aug.report.relations[0].shortfall, 1);
    }

    #[test]
    fn short_and_mismatched_blocks_are_rejected() {
        let raw = "Context: Zed in Oslo .\nHead Type: PERSON. Head Entity: Zed.\nTail Type: CITY. Tail Entity: Oslo.\nRelation: A.\n\nContext: Zed works for Acme as a senior engineer .\nHead Type: PERSON. Head Entity: Zed.\nTail Type: ORG. Tail Entity: Acme.\nRelation: B.\n";
        let aug = augment_dataset(&golden(1, 0), &ScriptedGenerator::new([raw]), 4, &AugmentOptions::default()).unwrap();
        let reasons: Vec<_> = aug.candidates.iter().map(|c| c.rejection_reason()).collect();
        assert_eq!(reasons, vec![Some(Rejection::TooShort), Some(Rejection::ParseFailure)]);
    }

    #[test]
    fn smaller_budget_accepts_a_prefix() {
        let gold = golden(8, 8);
        let g = MockGenerator::new(9);
        let big = augment_dataset(&gold, &g, 8, &AugmentOptions::default()).unwrap();
        let small = augment_dataset(&gold, &g, 3, &AugmentOptions::default()).unwrap();
        let big_keys: BTreeSet<String> = big.synthetic.instances.iter().map(|i| dedup_key(&i.sentence())).collect();
        for i in &small.synthetic.instances {
            assert!(big_keys.contains(&dedup_key(&i.sentence())));
        }
    }

    #[test]
    fn backend_failure_becomes_shortfall() {
        let g = ScriptedGenerator::with_failures(vec![Err("timeout".into())]);
        let aug = augment_dataset(&golden(2, 0), &g, 4, &AugmentOptions::default()).unwrap();
        assert_eq!(aug.report.total_shortfall(), 4);
        assert!(aug.report.relations[0].error.is_some());
    }
}
