//! Vocabulary, tiny transformer encoder, span pooling, MSLM head and
//! relation classifier, all differentiable through [`tape::Tape`].

mod model;
pub mod tape;
mod vocab;

pub use model::{
    pool_span, Bound, EncoderConfig, Model, ModelConfig, ModelParams, Representation, TensorSpec,
};
pub use vocab::{build_vocab, tokenize, Vocabulary, CLS, MASK, PAD, UNK};

use crate::corpus::{RelationInstance, Span};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Overlength { len: usize, max_len: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("empty span")]
    EmptySpan,
    #[error("span {span} out of range for sequence of length {len}")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter layout mismatch: {0}")]
    Shape(String),
}

/// Positions added in front of every sentence (`[cls]`).
pub const PREFIX_LEN: usize = 1;

/// `[cls]` followed by the sentence token ids.
pub fn sequence_ids<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<usize> {
    std::iter::once(Vocabulary::CLS_ID)
        .chain(tokens.iter().map(|t| vocab.id(t.as_ref())))
        .collect()
}

/// Relation probabilities for one instance.
pub fn predict_instance(
    model: &Model,
    vocab: &Vocabulary,
    inst: &RelationInstance,
) -> Result<Vec<f64>, ModelError> {
    let ids = sequence_ids(vocab, &inst.tokens);
    model.predict_proba(
        &ids,
        inst.subj_span.shifted(PREFIX_LEN),
        inst.obj_span.shifted(PREFIX_LEN),
    )
}

/// Verbalized relation label used as the contrastive anchor:
/// the `xxx:` prefix is dropped and underscores become spaces.
pub fn verbalize_relation(label: &str) -> Vec<String> {
    let base = label.split_once(':').map(|(_, r)| r).unwrap_or(label);
    tokenize(&base.replace(['_', '/'], " "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verbalization() {
        assert_eq!(verbalize_relation("per:city_of_birth"), vec!["city", "of", "birth"]);
        assert_eq!(verbalize_relation("no_relation"), vec!["no", "relation"]);
        assert_eq!(
            verbalize_relation("org:top_members/employees"),
            vec!["top", "members", "employees"]
        );
        assert_eq!(verbalize_relation("Message-Topic"), vec!["message", "-", "topic"]);
    }

    #[test]
    fn sequence_ids_prefix_cls() {
        let v = build_vocab(&[tokenize("a b")], 1);
        assert_eq!(sequence_ids(&v, &["a", "zz"]), vec![Vocabulary::CLS_ID, 4, Vocabulary::UNK_ID]);
    }
}
