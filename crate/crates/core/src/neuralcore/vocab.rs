use std::collections::HashMap;

pub const PAD: &str = "[pad]";
pub const UNK: &str = "[unk]";
pub const MASK: &str = "[mask]";
pub const CLS: &str = "[cls]";

/// Lowercase, split on whitespace, then split every punctuation character
/// into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Token → id map with four reserved ids at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const MASK_ID: usize = 2;
    pub const CLS_ID: usize = 3;

    /// Rebuild from an id-ordered token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < 4 || tokens[..4] != [PAD, UNK, MASK, CLS] {
            return None;
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.index
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(Self::UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Specials plus every lowercased token seen at least `min_count` times,
/// ordered by descending frequency then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for seq in corpus {
        for t in seq {
            *counts.entry(t.as_ref().to_lowercase()).or_default() += 1;
        }
    }
    let specials = [PAD, UNK, MASK, CLS];
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !specials.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = specials
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens).expect("specials are distinct")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("The 92-year-old CEO's firm, Inc."),
            vec!["the", "92", "-", "year", "-", "old", "ceo", "'", "s", "firm", ",", "inc", "."]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocab_counts_and_orders() {
        let corpus = vec![tokenize("a a b")];
        let v = build_vocab(&corpus, 1);
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(4), Some("a"));
        assert_eq!(v.token(5), Some("b"));
        assert_eq!(v.id("zzz"), Vocabulary::UNK_ID);
        assert_eq!(v.id("A"), 4);
    }

    #[test]
    fn saturating_threshold_keeps_only_specials() {
        let corpus = vec![tokenize("a a b")];
        let v = build_vocab(&corpus, usize::MAX);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id(MASK), Vocabulary::MASK_ID);
    }

    #[test]
    fn ties_break_lexicographically_and_deterministically() {
        let corpus = vec![tokenize("d c b a"), tokenize("c d")];
        let v1 = build_vocab(&corpus, 1);
        let v2 = build_vocab(&corpus, 1);
        assert_eq!(v1, v2);
        assert_eq!(&v1.tokens()[4..], &["c", "d", "a", "b"]);
    }

    #[test]
    fn from_tokens_rejects_bad_layout() {
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_none());
        let mut t: Vec<String> = [PAD, UNK, MASK, CLS].iter().map(|s| s.to_string()).collect();
        t.push("a".into());
        t.push("a".into());
        assert!(Vocabulary::from_tokens(t).is_none());
    }
}
