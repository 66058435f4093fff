use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<PAD>";
const UNK: &str = "<UNK>";

/// Token ↔ id map. Ids 0 and 1 are reserved for padding and unknown tokens;
/// corpus tokens follow in order of decreasing frequency, ties broken lexically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRecord", into = "VocabRecord")]
pub struct TokenVocab {
    tokens: Vec<String>,
    min_freq: usize,
    index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    min_freq: usize,
}

impl TryFrom<VocabRecord> for TokenVocab {
    type Error = Error;

    fn try_from(r: VocabRecord) -> Result<Self> {
        if r.tokens.len() < 2 || r.tokens[PAD_ID] != PAD || r.tokens[UNK_ID] != UNK {
            return Err(Error::Integrity(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let index: HashMap<String, usize> = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != r.tokens.len() {
            return Err(Error::Integrity("vocabulary holds duplicate tokens".into()));
        }
        Ok(TokenVocab {
            tokens: r.tokens,
            min_freq: r.min_freq,
            index,
        })
    }
}

impl From<TokenVocab> for VocabRecord {
    fn from(v: TokenVocab) -> Self {
        VocabRecord {
            tokens: v.tokens,
            min_freq: v.min_freq,
        }
    }
}

impl TokenVocab {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens: Vec<String> = [PAD, UNK]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(String::from)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TokenVocab {
            tokens,
            min_freq,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids truncated to `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<Vec<String>> {
        vec![
            ["a", "b", "a", "c"].map(String::from).to_vec(),
            ["a", "b", "rare"].map(String::from).to_vec(),
        ]
    }

    #[test]
    fn reserved_ids_and_cutoff() {
        let d = docs();
        let v = TokenVocab::build(d.iter().map(Vec::as_slice), 2);
        assert_eq!(v.token(PAD_ID), Some(PAD));
        assert_eq!(v.token(UNK_ID), Some(UNK));
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("rare"), UNK_ID);
        assert_eq!(v.id("never-seen"), UNK_ID);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn encode_truncates() {
        let d = docs();
        let v = TokenVocab::build(d.iter().map(Vec::as_slice), 1);
        assert_eq!(v.encode(&d[0], 2).len(), 2);
    }

    #[test]
    fn serde_round_trip() {
        let d = docs();
        let v = TokenVocab::build(d.iter().map(Vec::as_slice), 1);
        let back: TokenVocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
