use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::backend::Generator;
use super::parse::{parse_block, split_blocks, strip_dot, RawBlock};
use super::GenError;
use crate::corpus::Span;
use crate::neuralcore::verbalize_relation;
use crate::seed::{derive_seed, seed_from_bytes};

const CONNECTIVES: &[&str] = &[
    "the sentence states that",
    "the context tells us that",
    "we read that",
    "it is written that",
];

const LEADS: &[&str] = &["", "", "Reportedly ,", "According to records ,", "As noted ,", "In short ,"];

const SYNONYMS: &[(&str, &str)] = &[
    ("said", "stated"),
    ("big", "large"),
    ("small", "little"),
    ("new", "recent"),
    ("famous", "well-known"),
    ("recently", "lately"),
    ("also", "additionally"),
    ("company", "firm"),
];

const MAX_ATTEMPTS: u64 = 32;

/// Offline stand-in for a frozen LLM. Explanation prompts get a templated
/// justification; synthesis prompts get recombinations of the
/// demonstrations with seeded entity and word substitution.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    seed: u64,
}

struct Re {
    sentence: Regex,
    subject: Regex,
    object: Regex,
    relation: Regex,
    target: Regex,
    count: Regex,
}

fn re() -> &'static Re {
    static R: OnceLock<Re> = OnceLock::new();
    R.get_or_init(|| Re {
        sentence: Regex::new(r"(?m)^Sentence: (.*)$").unwrap(),
        subject: Regex::new(r"(?m)^Subject: (.*)$").unwrap(),
        object: Regex::new(r"(?m)^Object: (.*)$").unwrap(),
        relation: Regex::new(r"(?m)^Relation: (.*)$").unwrap(),
        target: Regex::new(r"(?m)^Target relation: (.*)$").unwrap(),
        count: Regex::new(r"(?m)^Write (\d+) new samples.*$").unwrap(),
    })
}

fn capture(r: &Regex, text: &str) -> Option<String> {
    r.captures(text).map(|c| c[1].trim().to_string())
}

fn find_words(hay: &[String], needle: &[String], avoid: &[Span]) -> Option<Span> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len())
        .map(|i| Span::new(i, i + needle.len()))
        .find(|s| hay[s.start..s.end] == *needle && avoid.iter().all(|a| !a.overlaps(s)))
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

struct Demo {
    block: RawBlock,
    words: Vec<String>,
    subj: Span,
    obj: Span,
    phrase: Option<Span>,
}

impl Demo {
    fn from_block(mut block: RawBlock) -> Option<Demo> {
        block.head = strip_dot(&block.head).to_string();
        block.tail = strip_dot(&block.tail).to_string();
        let w = words(&block.context);
        let subj = find_words(&w, &words(&block.head), &[])?;
        let obj = find_words(&w, &words(&block.tail), &[subj])?;
        let phrase = block
            .relation_phrase
            .as_deref()
            .and_then(|p| find_words(&w, &words(p), &[subj, obj]));
        Some(Demo {
            block,
            words: w,
            subj,
            obj,
            phrase,
        })
    }
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        MockGenerator { seed }
    }

    fn explain(&self, prompt: &str) -> Option<String> {
        let r = re();
        let sentence = capture(&r.sentence, prompt)?;
        let subject = capture(&r.subject, prompt)?;
        let object = capture(&r.object, prompt)?;
        let relation = capture(&r.relation, prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from_bytes(self.seed, prompt.as_bytes()));
        let connective = CONNECTIVES.choose(&mut rng).unwrap();
        Some(format!(
            "In this sentence, the subject \"{subject}\" has the relation \"{relation}\" with the object \"{object}\" because {connective} {sentence} This expresses {}.",
            verbalize_relation(&relation).join(" ")
        ))
    }

    fn synthesize(&self, prompt: &str) -> Option<String> {
        let r = re();
        let target = capture(&r.target, prompt)?;
        let count: usize = capture(&r.count, prompt)?.parse().ok()?;
        let demo_text = prompt.split_once("Demonstrations:")?.1;
        let demo_text = demo_text.rsplit_once("Samples:").map(|(d, _)| d).unwrap_or(demo_text);
        let demos: Vec<Demo> = split_blocks(demo_text)
            .iter()
            .filter_map(|b| parse_block(b))
            .filter_map(Demo::from_block)
            .collect();
        if demos.is_empty() {
            return Some("No demonstrations were given, so no samples can be written.\n".into());
        }
        // The count line is excluded so a larger request extends a smaller one.
        let stable = r.count.replace(prompt, "");
        let base = seed_from_bytes(self.seed, stable.as_bytes());
        let mut seen: BTreeSet<String> = demos.iter().map(|d| d.block.context.to_lowercase()).collect();
        let mut out = String::new();
        for i in 0..count as u64 {
            let mut sample = None;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[base, i, attempt]));
                let s = recombine(&demos, &mut rng);
                if seen.insert(s.0.to_lowercase()) {
                    sample = Some(s);
                    break;
                }
            }
            let Some((context, head, tail, phrase, demo)) = sample else { continue };
            out.push_str(&format!(
                "Context: {context}\nHead Type: {}. Head Entity: {head}.\nTail Type: {}. Tail Entity: {tail}.\nRelation: {target}.\n",
                demo.block.head_type, demo.block.tail_type
            ));
            if let Some(p) = phrase {
                out.push_str(&format!("Relation Phrase: {p}.\n"));
            }
            out.push('\n');
        }
        Some(out)
    }
}

type Sample<'a> = (String, String, String, Option<String>, &'a Demo);

fn recombine<'a>(demos: &'a [Demo], rng: &mut ChaCha8Rng) -> Sample<'a> {
    let c = demos.choose(rng).unwrap();
    let head_donors: Vec<&Demo> = demos.iter().filter(|d| d.block.head_type == c.block.head_type).collect();
    let tail_donors: Vec<&Demo> = demos.iter().filter(|d| d.block.tail_type == c.block.tail_type).collect();
    let head = &head_donors.choose(rng).unwrap().block.head;
    let tail = &tail_donors.choose(rng).unwrap().block.tail;
    let (head, tail) = if words(head) == words(tail) {
        (c.block.head.clone(), c.block.tail.clone())
    } else {
        (head.clone(), tail.clone())
    };
    let protected: Vec<Span> = [Some(c.subj), Some(c.obj), c.phrase].into_iter().flatten().collect();
    let mut pieces: Vec<String> = Vec::with_capacity(c.words.len() + 4);
    let lead = LEADS.choose(rng).unwrap();
    if !lead.is_empty() {
        pieces.extend(words(lead));
    }
    let mut i = 0;
    while i < c.words.len() {
        if i == c.subj.start {
            pieces.extend(words(&head));
            i = c.subj.end;
        } else if i == c.obj.start {
            pieces.extend(words(&tail));
            i = c.obj.end;
        } else {
            let w = &c.words[i];
            let swap = protected.iter().all(|s| !s.contains(i)) && rng.random_bool(0.5);
            let replacement = SYNONYMS
                .iter()
                .find(|(a, _)| swap && w.eq_ignore_ascii_case(a))
                .map(|(_, b)| b.to_string());
            pieces.push(replacement.unwrap_or_else(|| w.clone()));
            i += 1;
        }
    }
    let phrase = c.phrase.map(|p| c.words[p.start..p.end].join(" "));
    (pieces.join(" "), head, tail, phrase, c)
}

impl Generator for MockGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GenError> {
        if prompt.contains("Demonstrations:") {
            if let Some(s) = self.synthesize(prompt) {
                return Ok(s);
            }
        } else if let Some(s) = self.explain(prompt) {
            return Ok(s);
        }
        Ok("I could not follow the instruction.".into())
    }
}
