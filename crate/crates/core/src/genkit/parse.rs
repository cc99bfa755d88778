use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Provenance, RelationInstance, RelationSchema, Span};
use crate::neuralcore::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    ParseFailure,
    SpanNotFound,
    TypeIncompatible,
    Duplicate,
    TooShort,
}

/// One generated block and what became of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCandidate {
    pub raw: String,
    pub outcome: Result<RelationInstance, Rejection>,
}

impl SyntheticCandidate {
    pub fn parsed(&self) -> Option<&RelationInstance> {
        self.outcome.as_ref().ok()
    }

    pub fn rejection_reason(&self) -> Option<Rejection> {
        self.outcome.as_ref().err().copied()
    }

    fn reject(raw: &str, r: Rejection) -> Self {
        SyntheticCandidate {
            raw: raw.to_string(),
            outcome: Err(r),
        }
    }
}

/// Fields of a block before any schema checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBlock {
    pub context: String,
    pub head_type: String,
    pub head: String,
    pub tail_type: String,
    pub tail: String,
    pub relation: String,
    pub relation_phrase: Option<String>,
}

struct Patterns {
    context: Regex,
    head: Regex,
    tail: Regex,
    relation: Regex,
    phrase: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        context: Regex::new(r"(?m)^[ \t]*Context:[ \t]*(\S.*?)[ \t]*$").unwrap(),
        head: Regex::new(r"(?m)^[ \t]*Head Type:[ \t]*([^\n]*?)\.[ \t]*Head Entity:[ \t]*(\S.*?)[ \t]*$")
            .unwrap(),
        tail: Regex::new(r"(?m)^[ \t]*Tail Type:[ \t]*([^\n]*?)\.[ \t]*Tail Entity:[ \t]*(\S.*?)[ \t]*$")
            .unwrap(),
        relation: Regex::new(r"(?m)^[ \t]*Relation:[ \t]*(\S.*?)[ \t]*$").unwrap(),
        phrase: Regex::new(r"(?m)^[ \t]*Relation Phrase:[ \t]*(\S.*?)[ \t]*$").unwrap(),
    })
}

pub(crate) fn strip_dot(s: &str) -> &str {
    s.strip_suffix('.').unwrap_or(s).trim_end()
}

/// Split generator output into blocks, each starting at a `Context:` line.
pub fn split_blocks(raw: &str) -> Vec<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in raw.lines() {
        if line.trim_start().starts_with("Context:") {
            if let Some(b) = current.take() {
                blocks.push(b);
            }
            current = Some(String::new());
        }
        if let Some(b) = current.as_mut() {
            b.push_str(line);
            b.push('\n');
        }
    }
    if let Some(b) = current {
        blocks.push(b);
    }
    if blocks.is_empty() && !raw.trim().is_empty() {
        blocks.push(raw.to_string());
    }
    blocks
}

pub fn parse_block(raw: &str) -> Option<RawBlock> {
    let p = patterns();
    let context = p.context.captures(raw)?.get(1)?.as_str().to_string();
    let head = p.head.captures(raw)?;
    let tail = p.tail.captures(raw)?;
    let relation = strip_dot(p.relation.captures(raw)?.get(1)?.as_str()).to_string();
    let relation_phrase = p
        .phrase
        .captures(raw)
        .and_then(|c| c.get(1))
        .map(|m| strip_dot(m.as_str()).to_string());
    Some(RawBlock {
        context,
        head_type: head[1].trim().to_string(),
        head: head[2].to_string(),
        tail_type: tail[1].trim().to_string(),
        tail: tail[2].to_string(),
        relation,
        relation_phrase,
    })
}

/// First occurrence of `needle` in `hay` starting at or after `from`.
pub fn find_tokens(hay: &[String], needle: &[String], from: usize) -> Option<Span> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()] == *needle)
        .map(|i| Span::new(i, i + needle.len()))
}

/// First occurrence of `needle` that avoids every span in `avoid`.
pub fn find_tokens_avoiding(hay: &[String], needle: &[String], avoid: &[Span]) -> Option<Span> {
    let mut from = 0;
    while let Some(s) = find_tokens(hay, needle, from) {
        if avoid.iter().all(|a| !a.overlaps(&s)) {
            return Some(s);
        }
        from = s.start + 1;
    }
    None
}

/// The line format ends every entity with a period, so the stripped form is
/// tried first; the literal form covers names like "Calif.".
fn locate_entity(tokens: &[String], surface: &str, avoid: &[Span]) -> Option<Span> {
    let stripped = tokenize(strip_dot(surface));
    find_tokens_avoiding(tokens, &stripped, avoid).or_else(|| {
        let literal = tokenize(surface);
        if stripped != literal {
            find_tokens_avoiding(tokens, &literal, avoid)
        } else {
            None
        }
    })
}

/// Turn one generated block into a validated instance, or say why not.
/// Total over all input strings.
pub fn parse_synthetic(raw: &str, schema: &RelationSchema) -> SyntheticCandidate {
    let Some(block) = parse_block(raw) else {
        return SyntheticCandidate::reject(raw, Rejection::ParseFailure);
    };
    if !schema.has_relation(&block.relation) {
        return SyntheticCandidate::reject(raw, Rejection::ParseFailure);
    }
    if !schema.types_compatible(&block.relation, &block.head_type, &block.tail_type) {
        return SyntheticCandidate::reject(raw, Rejection::TypeIncompatible);
    }
    let tokens = tokenize(&block.context);
    let Some(subj) = locate_entity(&tokens, &block.head, &[]) else {
        return SyntheticCandidate::reject(raw, Rejection::SpanNotFound);
    };
    let Some(obj) = locate_entity(&tokens, &block.tail, &[subj]) else {
        return SyntheticCandidate::reject(raw, Rejection::SpanNotFound);
    };
    let relation_span = block
        .relation_phrase
        .as_deref()
        .and_then(|p| find_tokens_avoiding(&tokens, &tokenize(p), &[subj, obj]));
    SyntheticCandidate {
        raw: raw.to_string(),
        outcome: Ok(RelationInstance {
            tokens,
            subj_span: subj,
            obj_span: obj,
            subj_type: block.head_type,
            obj_type: block.tail_type,
            relation: block.relation,
            relation_span,
            provenance: Provenance::Synthetic,
        }),
    }
}
