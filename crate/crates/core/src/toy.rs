//! Bundled templated corpus: four relations plus `no_relation`, forty
//! sentence patterns (core clause inside a frame) with annotated subject,
//! object and trigger spans.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_dataset, CorpusError, Dataset, Provenance, RelationInstance, RelationSchema, Span};
use crate::seed::derive_seed;

pub const TOY_SEED: u64 = 20240611;
pub const TRAIN_PER_RELATION: usize = 60;
pub const TEST_PER_RELATION: usize = 40;
pub const NONE_LABEL: &str = "no_relation";

const PERSON: &str = "PERSON";
const ORG: &str = "ORGANIZATION";
const CITY: &str = "CITY";

/// `(relation, subject type, object type, core clause)`. `{S}` and `{O}`
/// are the entity slots, `[...]` marks the relation trigger.
const CORES: &[(&str, &str, &str, &str)] = &[
    ("per:employee_of", PERSON, ORG, "{S} [works for] {O}"),
    ("per:employee_of", PERSON, ORG, "{S} is [employed by] {O}"),
    ("per:city_of_birth", PERSON, CITY, "{S} [was born in] {O}"),
    ("per:city_of_birth", PERSON, CITY, "{O} is the [birthplace of] {S}"),
    ("org:founded_by", ORG, PERSON, "{S} [was founded by] {O}"),
    ("org:founded_by", ORG, PERSON, "{O} is the [founder of] {S}"),
    ("org:city_of_headquarters", ORG, CITY, "{S} [is headquartered in] {O}"),
    ("org:city_of_headquarters", ORG, CITY, "{O} hosts the [headquarters of] {S}"),
    (NONE_LABEL, PERSON, ORG, "{S} criticized {O} in an interview"),
    (NONE_LABEL, PERSON, CITY, "{S} visited {O} last summer"),
    (NONE_LABEL, ORG, PERSON, "{S} sued {O} over a contract"),
    (NONE_LABEL, ORG, CITY, "{S} sponsored a music festival in {O}"),
];

/// Frames wrapped around a core clause `{C}`.
const FRAMES: &[&str] = &[
    "{C} .",
    "According to reports , {C} .",
    "{C} , officials said .",
    "Last year , {C} .",
];

/// Relation cores take every frame; `no_relation` cores take the first two.
fn patterns() -> Vec<(&'static str, &'static str, &'static str, String)> {
    let mut out = Vec::new();
    for &(rel, s, o, core) in CORES {
        let frames = if rel == NONE_LABEL { &FRAMES[..2] } else { FRAMES };
        for f in frames {
            out.push((rel, s, o, f.replace("{C}", core)));
        }
    }
    out
}

fn patterns_cached() -> &'static [(&'static str, &'static str, &'static str, String)] {
    static P: std::sync::OnceLock<Vec<(&str, &str, &str, String)>> = std::sync::OnceLock::new();
    P.get_or_init(patterns)
}

const FIRST_NAMES: &[&str] = &[
    "Alice", "Bruno", "Chen", "Dalia", "Erik", "Fatima", "Goran", "Hana", "Ivan", "Julia", "Kenji", "Lena", "Marco",
    "Nadia", "Omar", "Priya", "Quentin", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wei", "Yusuf",
];
const LAST_NAMES: &[&str] = &[
    "Abbott", "Bauer", "Costa", "Dubois", "Eriksen", "Fischer", "Garcia", "Haddad", "Ito", "Jensen", "Kowalski",
    "Larsen", "Moreau", "Novak", "Okafor", "Petrov", "Quinn", "Rossi", "Sato", "Tanaka", "Ueda", "Varga",
];
const ORG_HEADS: &[&str] = &[
    "Apex", "Blue", "Cobalt", "Delta", "Ember", "Falcon", "Granite", "Harbor", "Iris", "Juniper", "Keystone", "Lumen",
    "Meridian", "Nimbus", "Orbit", "Pioneer", "Quartz", "Redwood", "Summit", "Titan",
];
const ORG_TAILS: &[&str] = &["Corp", "Labs", "Group", "Systems", "Industries", "Holdings"];
const CITIES: &[&str] = &[
    "Lyon", "Oslo", "Porto", "Kyoto", "Lima", "Dakar", "Quito", "Turin", "Graz", "Bergen", "Cork", "Leeds", "Malmo",
    "Bilbao", "Krakow", "Tampere", "Utrecht", "Seville", "Zagreb", "Nantes", "New York", "San Diego", "Cape Town",
    "Buenos Aires",
];

fn entity<R: rand::Rng>(ty: &str, rng: &mut R) -> String {
    let pick = |xs: &[&str], rng: &mut R| xs.choose(rng).expect("non-empty pool").to_string();
    match ty {
        PERSON => format!("{} {}", pick(FIRST_NAMES, rng), pick(LAST_NAMES, rng)),
        ORG => format!("{} {}", pick(ORG_HEADS, rng), pick(ORG_TAILS, rng)),
        _ => pick(CITIES, rng),
    }
}

pub fn toy_schema() -> RelationSchema {
    let relations: Vec<String> = [
        "per:employee_of",
        "per:city_of_birth",
        "org:founded_by",
        "org:city_of_headquarters",
        NONE_LABEL,
    ]
    .map(String::from)
    .to_vec();
    let mut compat: BTreeMap<String, BTreeSet<(String, String)>> = BTreeMap::new();
    for (rel, s, o, _) in CORES {
        compat.entry(rel.to_string()).or_default().insert((s.to_string(), o.to_string()));
    }
    let types = [PERSON, ORG, CITY].map(String::from).into_iter().collect();
    RelationSchema::new(relations, Some(NONE_LABEL.into()), types, compat).expect("toy schema is valid")
}

pub fn pattern_count() -> usize {
    patterns_cached().len()
}

/// Fill one pattern with the given entity strings.
pub fn instantiate(pattern: usize, subject: &str, object: &str) -> RelationInstance {
    let (rel, st, ot, text) = &patterns_cached()[pattern];
    let mut tokens: Vec<String> = Vec::new();
    let (mut subj, mut obj, mut trig) = (None, None, None);
    let mut trig_start = None;
    for raw in text.split_whitespace() {
        match raw {
            "{S}" | "{O}" => {
                let start = tokens.len();
                tokens.extend(if raw == "{S}" { subject } else { object }.split_whitespace().map(String::from));
                let span = Span::new(start, tokens.len());
                if raw == "{S}" {
                    subj = Some(span);
                } else {
                    obj = Some(span);
                }
            }
            w => {
                let mut w = w;
                if let Some(rest) = w.strip_prefix('[') {
                    trig_start = Some(tokens.len());
                    w = rest;
                }
                let closes = w.ends_with(']');
                tokens.push(w.trim_end_matches(']').to_string());
                if closes {
                    trig = trig_start.map(|s| Span::new(s, tokens.len()));
                }
            }
        }
    }
    RelationInstance {
        tokens,
        subj_span: subj.expect("pattern has a subject slot"),
        obj_span: obj.expect("pattern has an object slot"),
        subj_type: st.to_string(),
        obj_type: ot.to_string(),
        relation: rel.to_string(),
        relation_span: trig,
        provenance: Provenance::Golden,
    }
}

/// `per_relation` distinct sentences per label, cycling through that
/// label's patterns and skipping any sentence in `exclude`.
fn generate(per_relation: usize, seed: u64, exclude: &HashSet<Vec<String>>) -> Vec<RelationInstance> {
    let schema = toy_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = exclude.clone();
    let mut out = Vec::new();
    for rel in &schema.relations {
        let pats = patterns_cached();
        let idx: Vec<usize> = (0..pats.len()).filter(|&i| pats[i].0 == rel).collect();
        let mut made = 0;
        while made < per_relation {
            let p = idx[made % idx.len()];
            let (_, st, ot, _) = pats[p];
            let inst = instantiate(p, &entity(st, &mut rng), &entity(ot, &mut rng));
            if seen.insert(inst.tokens.clone()) {
                out.push(inst);
                made += 1;
            }
        }
    }
    out
}

/// The bundled `(train, test)` splits. Test sentences never occur in train.
pub fn toy_splits() -> (Dataset, Dataset) {
    let schema = toy_schema();
    let train = generate(TRAIN_PER_RELATION, derive_seed(&[TOY_SEED, 1]), &HashSet::new());
    let seen: HashSet<Vec<String>> = train.iter().map(|i| i.tokens.clone()).collect();
    let test = generate(TEST_PER_RELATION, derive_seed(&[TOY_SEED, 2]), &seen);
    (
        Dataset::new(schema.clone(), train, "train").expect("toy train is valid"),
        Dataset::new(schema, test, "test").expect("toy test is valid"),
    )
}

pub fn write_toy(dir: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let schema = serde_json::to_string_pretty(&toy_schema()).expect("schema serializes") + "\n";
    std::fs::write(dir.join("schema.json"), schema).map_err(io)?;
    let (train, test) = toy_splits();
    write_dataset(&train, &dir.join("train.jsonl"))?;
    write_dataset(&test, &dir.join("test.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_and_triggers() {
        let inst = instantiate(2, "Alice Bauer", "Apex Corp");
        assert_eq!(inst.sentence(), "Alice Bauer works for Apex Corp , officials said .");
        assert_eq!(inst.subject_text(), "Alice Bauer");
        assert_eq!(inst.object_text(), "Apex Corp");
        assert_eq!(inst.relation_phrase().as_deref(), Some("works for"));
        let none = instantiate(pattern_count() - 1, "Blue Labs", "Lyon");
        assert_eq!(none.relation_span, None);
    }

    #[test]
    fn splits_are_balanced_and_disjoint() {
        let (train, test) = toy_splits();
        assert_eq!(train.len(), 5 * TRAIN_PER_RELATION);
        assert_eq!(test.len(), 200);
        let tr: HashSet<_> = train.instances.iter().map(|i| &i.tokens).collect();
        assert!(test.instances.iter().all(|i| !tr.contains(&i.tokens)));
        assert_eq!(pattern_count(), 40);
    }

    #[test]
    fn bundled_files_match_generator() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy");
        let schema = RelationSchema::load(&dir.join("schema.json")).unwrap();
        assert_eq!(schema, toy_schema());
        let (train, test) = toy_splits();
        for (d, f) in [(&train, "train.jsonl"), (&test, "test.jsonl")] {
            let text = std::fs::read_to_string(dir.join(f)).unwrap();
            assert_eq!(text, crate::corpus::dataset_to_jsonl(d), "{f} is stale");
        }
    }
}
