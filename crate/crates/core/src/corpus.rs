//! Relation instances, schemas, dataset ingestion and K-shot sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {index}: invalid field `{field}`: {message}")]
    Validation {
        index: usize,
        field: &'static str,
        message: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("schema mismatch between datasets `{0}` and `{1}`")]
    SchemaMismatch(String, String),
}

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    /// Shift both ends right by `offset` positions.
    pub fn shifted(&self, offset: usize) -> Span {
        Span::new(self.start + offset, self.end + offset)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Golden,
    Synthetic,
    Explanation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub tokens: Vec<String>,
    pub subj_span: Span,
    pub obj_span: Span,
    pub subj_type: String,
    pub obj_type: String,
    pub relation: String,
    pub relation_span: Option<Span>,
    pub provenance: Provenance,
}

impl RelationInstance {
    pub fn subject_text(&self) -> String {
        self.span_text(self.subj_span)
    }

    pub fn object_text(&self) -> String {
        self.span_text(self.obj_span)
    }

    pub fn relation_phrase(&self) -> Option<String> {
        self.relation_span.map(|s| self.span_text(s))
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..span.end].join(" ")
    }

    /// Structural checks that do not need a schema.
    fn check_spans(&self) -> Result<(), (&'static str, String)> {
        let n = self.tokens.len();
        let check = |name: &'static str, s: Span| {
            if s.start >= s.end || s.end > n {
                Err((name, format!("span {s} out of bounds for {n} tokens")))
            } else {
                Ok(())
            }
        };
        check("subj_span", self.subj_span)?;
        check("obj_span", self.obj_span)?;
        if let Some(r) = self.relation_span {
            check("relation_span", r)?;
        }
        if self.subj_span.overlaps(&self.obj_span) {
            return Err((
                "obj_span",
                format!("overlaps subj_span {}", self.subj_span),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub relations: Vec<String>,
    #[serde(default)]
    pub none_label: Option<String>,
    pub entity_types: BTreeSet<String>,
    /// Allowed `(subject type, object type)` pairs per relation. A relation
    /// without an entry accepts every pair of known types.
    #[serde(default)]
    pub compat: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl RelationSchema {
    pub fn new(
        relations: Vec<String>,
        none_label: Option<String>,
        entity_types: BTreeSet<String>,
        compat: BTreeMap<String, BTreeSet<(String, String)>>,
    ) -> Result<Self, CorpusError> {
        let schema = RelationSchema {
            relations,
            none_label,
            entity_types,
            compat,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let schema: RelationSchema = serde_json::from_str(&text).map_err(parse_error)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.relations.is_empty() {
            return Err(CorpusError::Schema("relation set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.relations {
            if !seen.insert(r) {
                return Err(CorpusError::Schema(format!("duplicate relation `{r}`")));
            }
        }
        if let Some(none) = &self.none_label {
            if !seen.contains(none) {
                return Err(CorpusError::Schema(format!(
                    "none_label `{none}` is not a relation"
                )));
            }
        }
        for (rel, pairs) in &self.compat {
            if !seen.contains(rel) {
                return Err(CorpusError::Schema(format!(
                    "compat entry for unknown relation `{rel}`"
                )));
            }
            for (s, o) in pairs {
                for t in [s, o] {
                    if !self.entity_types.contains(t) {
                        return Err(CorpusError::Schema(format!(
                            "compat entry for `{rel}` uses unknown entity type `{t}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn relation_index(&self, relation: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == relation)
    }

    pub fn has_relation(&self, relation: &str) -> bool {
        self.relation_index(relation).is_some()
    }

    pub fn types_compatible(&self, relation: &str, subj_type: &str, obj_type: &str) -> bool {
        if !self.entity_types.contains(subj_type) || !self.entity_types.contains(obj_type) {
            return false;
        }
        match self.compat.get(relation) {
            Some(pairs) => pairs.contains(&(subj_type.to_string(), obj_type.to_string())),
            None => true,
        }
    }

    /// Stable hash of the label space, used to pair models with datasets.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for r in &self.relations {
            h.update(r.as_bytes());
            h.update([0u8]);
        }
        h.update(self.none_label.as_deref().unwrap_or("").as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Validate an instance against this schema. Returns the offending field.
    pub fn check_instance(&self, inst: &RelationInstance) -> Result<(), (&'static str, String)> {
        inst.check_spans()?;
        if !self.has_relation(&inst.relation) {
            return Err(("relation", format!("unknown relation `{}`", inst.relation)));
        }
        if !self.entity_types.contains(&inst.subj_type) {
            return Err(("subj_type", format!("unknown entity type `{}`", inst.subj_type)));
        }
        if !self.entity_types.contains(&inst.obj_type) {
            return Err(("obj_type", format!("unknown entity type `{}`", inst.obj_type)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: RelationSchema,
    pub instances: Vec<RelationInstance>,
    pub split_name: String,
}

impl Dataset {
    pub fn new(
        schema: RelationSchema,
        instances: Vec<RelationInstance>,
        split_name: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        for (index, inst) in instances.iter().enumerate() {
            schema
                .check_instance(inst)
                .map_err(|(field, message)| CorpusError::Validation {
                    index,
                    field,
                    message,
                })?;
        }
        Ok(Dataset {
            schema,
            instances,
            split_name: split_name.into(),
        })
    }

    pub fn empty(schema: RelationSchema, split_name: impl Into<String>) -> Self {
        Dataset {
            schema,
            instances: Vec::new(),
            split_name: split_name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instance count per relation, in schema order, zero counts included.
    pub fn relation_counts(&self) -> Vec<(String, usize)> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for inst in &self.instances {
            *counts.entry(inst.relation.as_str()).or_default() += 1;
        }
        self.schema
            .relations
            .iter()
            .map(|r| (r.clone(), counts.get(r.as_str()).copied().unwrap_or(0)))
            .collect()
    }

    pub fn provenance_histogram(&self) -> BTreeMap<Provenance, usize> {
        let mut hist = BTreeMap::new();
        for inst in &self.instances {
            *hist.entry(inst.provenance).or_default() += 1;
        }
        hist
    }
}

/// On-disk record. Entity and relation indices are inclusive on both ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonRecord {
    pub tokens: Vec<String>,
    pub subj_start: usize,
    pub subj_end: usize,
    pub obj_start: usize,
    pub obj_end: usize,
    pub subj_type: String,
    pub obj_type: String,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_end: Option<usize>,
    #[serde(default, skip_serializing_if = "is_golden")]
    pub provenance: Provenance,
}

fn is_golden(p: &Provenance) -> bool {
    *p == Provenance::Golden
}

impl JsonRecord {
    fn into_instance(self, index: usize) -> Result<RelationInstance, CorpusError> {
        let inclusive = |field: &'static str, start: usize, end: usize| {
            if end < start {
                Err(CorpusError::Validation {
                    index,
                    field,
                    message: format!("end {end} precedes start {start}"),
                })
            } else {
                Ok(Span::new(start, end + 1))
            }
        };
        let relation_span = match (self.relation_start, self.relation_end) {
            (Some(s), Some(e)) => Some(inclusive("relation_end", s, e)?),
            (None, None) => None,
            _ => {
                return Err(CorpusError::Validation {
                    index,
                    field: "relation_start",
                    message: "relation_start and relation_end must be given together".into(),
                })
            }
        };
        Ok(RelationInstance {
            subj_span: inclusive("subj_end", self.subj_start, self.subj_end)?,
            obj_span: inclusive("obj_end", self.obj_start, self.obj_end)?,
            tokens: self.tokens,
            subj_type: self.subj_type,
            obj_type: self.obj_type,
            relation: self.relation,
            relation_span,
            provenance: self.provenance,
        })
    }
}

impl From<&RelationInstance> for JsonRecord {
    fn from(inst: &RelationInstance) -> Self {
        JsonRecord {
            tokens: inst.tokens.clone(),
            subj_start: inst.subj_span.start,
            subj_end: inst.subj_span.end - 1,
            obj_start: inst.obj_span.start,
            obj_end: inst.obj_span.end - 1,
            subj_type: inst.subj_type.clone(),
            obj_type: inst.obj_type.clone(),
            relation: inst.relation.clone(),
            relation_start: inst.relation_span.map(|s| s.start),
            relation_end: inst.relation_span.map(|s| s.end - 1),
            provenance: inst.provenance,
        }
    }
}

fn parse_error(e: serde_json::Error) -> CorpusError {
    CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parse records from either a JSON array or JSON-lines text.
pub fn parse_records(text: &str) -> Result<Vec<JsonRecord>, CorpusError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(text).map_err(parse_error);
    }
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn dataset_from_str(
    text: &str,
    schema: &RelationSchema,
    split_name: &str,
) -> Result<Dataset, CorpusError> {
    let instances = parse_records(text)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_instance(i))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(schema.clone(), instances, split_name)
}

pub fn load_dataset(path: &Path, schema: &RelationSchema) -> Result<Dataset, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let split = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_from_str(&text, schema, &split)
}

/// JSON-lines rendering, one record per line.
pub fn dataset_to_jsonl(d: &Dataset) -> String {
    let mut out = String::new();
    for inst in &d.instances {
        out.push_str(&serde_json::to_string(&JsonRecord::from(inst)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(dataset_to_jsonl(d).as_bytes()).map_err(io)?;
    Ok(())
}

/// Draw `min(k, count_r)` instances of every relation uniformly without
/// replacement. Output is grouped by relation in schema order; within a
/// relation, original dataset order is kept.
pub fn sample_kshot(d: &Dataset, k: usize, seed: u64) -> Dataset {
    let mut by_relation: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, inst) in d.instances.iter().enumerate() {
        by_relation.entry(inst.relation.as_str()).or_default().push(i);
    }
    let mut chosen = Vec::new();
    for (ri, rel) in d.schema.relations.iter().enumerate() {
        let Some(pool) = by_relation.get(rel.as_str()) else {
            continue;
        };
        let take = k.min(pool.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, ri as u64]));
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    Dataset {
        schema: d.schema.clone(),
        instances: chosen.into_iter().map(|i| d.instances[i].clone()).collect(),
        split_name: format!("{}-{}shot", d.split_name, k),
    }
}

pub fn merge(golden: &Dataset, synthetic: &Dataset) -> Result<Dataset, CorpusError> {
    if golden.schema != synthetic.schema {
        return Err(CorpusError::SchemaMismatch(
            golden.split_name.clone(),
            synthetic.split_name.clone(),
        ));
    }
    let mut instances = golden.instances.clone();
    instances.extend(synthetic.instances.iter().cloned());
    Ok(Dataset {
        schema: golden.schema.clone(),
        instances,
        split_name: format!("{}+{}", golden.split_name, synthetic.split_name),
    })
}
