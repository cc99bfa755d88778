use crate::corpus::{RelationInstance, RelationSchema};

use super::GenError;

pub const EXPLAIN_TEMPLATE: &str = include_str!("../../templates/explain.txt");
pub const SYNTHESIZE_TEMPLATE: &str = include_str!("../../templates/synthesize.txt");

/// Substitute every `{name}` slot. Unknown slots are left untouched.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

fn require<'a>(slot: &'static str, value: &'a str) -> Result<&'a str, GenError> {
    if value.trim().is_empty() {
        Err(GenError::MissingSlot(slot))
    } else {
        Ok(value)
    }
}

pub fn build_explanation_prompt(inst: &RelationInstance) -> Result<String, GenError> {
    build_explanation_prompt_with(EXPLAIN_TEMPLATE, inst)
}

pub fn build_explanation_prompt_with(template: &str, inst: &RelationInstance) -> Result<String, GenError> {
    let sentence = inst.sentence();
    let subject = inst.subject_text();
    let object = inst.object_text();
    Ok(fill(
        template,
        &[
            ("sentence", require("sentence", &sentence)?),
            ("subject", require("subject", &subject)?),
            ("object", require("object", &object)?),
            ("relation", require("relation", &inst.relation)?),
        ],
    ))
}

/// One sample in the line format shared by demonstrations and generator
/// output.
pub fn format_block(inst: &RelationInstance) -> String {
    let mut s = format!(
        "Context: {}\nHead Type: {}. Head Entity: {}.\nTail Type: {}. Tail Entity: {}.\nRelation: {}.\n",
        inst.sentence(),
        inst.subj_type,
        inst.subject_text(),
        inst.obj_type,
        inst.object_text(),
        inst.relation
    );
    if let Some(p) = inst.relation_phrase() {
        s.push_str(&format!("Relation Phrase: {p}.\n"));
    }
    s
}

pub fn build_synthesis_prompt(
    schema: &RelationSchema,
    relation: &str,
    exemplars: &[RelationInstance],
    count: usize,
) -> Result<String, GenError> {
    build_synthesis_prompt_with(SYNTHESIZE_TEMPLATE, schema, relation, exemplars, count)
}

pub fn build_synthesis_prompt_with(
    template: &str,
    schema: &RelationSchema,
    relation: &str,
    exemplars: &[RelationInstance],
    count: usize,
) -> Result<String, GenError> {
    require("relation", relation)?;
    if !schema.has_relation(relation) {
        return Err(GenError::UnknownRelation(relation.to_string()));
    }
    if let Some(bad) = exemplars.iter().find(|e| e.relation != relation) {
        return Err(GenError::ExemplarMismatch {
            expected: relation.to_string(),
            found: bad.relation.clone(),
        });
    }
    let type_pairs = match schema.compat.get(relation) {
        Some(pairs) => pairs
            .iter()
            .map(|(s, o)| format!("({s}, {o})"))
            .collect::<Vec<_>>()
            .join(", "),
        None => "any".to_string(),
    };
    let demonstrations: String = exemplars
        .iter()
        .map(|e| format_block(e) + "\n")
        .collect();
    let count = count.to_string();
    Ok(fill(
        template,
        &[
            ("relation", relation),
            ("type_pairs", &type_pairs),
            ("count", &count),
            ("demonstrations", &demonstrations),
        ],
    ))
}
