use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

/// Lowercases and splits on whitespace; each punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Bijective token/id table with `[PAD]`, `[UNK]`, `[CLS]` fixed at 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::Validation(
                "vocabulary must start with [PAD] [UNK] [CLS]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { index, tokens })
    }

    /// Frequency-sorted vocabulary (ties broken lexicographically) of tokens
    /// seen at least `min_count` times. `max_size` counts the reserved ids.
    pub fn build(examples: &[Example], min_count: usize, max_size: Option<usize>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for tok in tokenize(&ex.text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let limit = max_size.map_or(usize::MAX, |m| m.saturating_sub(RESERVED.len()));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(limit).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// A fixed-length id sequence with its padding mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub true_len: usize,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `[CLS]` + token ids, truncated to `max_len` and padded with `[PAD]`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(tokenize(text).iter().take(max_len - 1).map(|t| vocab.id(t)));
    let true_len = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| u8::from(i < true_len)).collect();
    Ok(TokenSeq {
        ids,
        mask,
        true_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> Vec<Example> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Example::new(i.to_string(), *t, None))
            .collect()
    }

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Oil, prices RALLIED!"),
            vec!["oil", ",", "prices", "rallied", "!"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn frequency_order_with_lexicographic_ties() {
        let v = Vocab::build(&corpus(&["a b", "b c"]), 1, None).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[CLS]", "b", "a", "c"]);
    }

    #[test]
    fn min_count_and_max_size() {
        let c = corpus(&["a b", "b c"]);
        let v = Vocab::build(&c, 3, None).unwrap();
        assert_eq!(v.len(), 3);
        let v = Vocab::build(&c, 1, Some(4)).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[CLS]", "b"]);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(Vocab::build(&[], 1, None).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = Vocab::build(&corpus(&["a b", "b c"]), 1, None).unwrap();
        let e = encode("", &v, 5).unwrap();
        assert_eq!(e.ids, vec![CLS, PAD, PAD, PAD, PAD]);
        assert_eq!(e.true_len, 1);

        let e = encode("a zzz", &v, 5).unwrap();
        assert_eq!(e.ids, vec![CLS, v.id("a"), UNK, PAD, PAD]);
        assert_eq!(e.mask, vec![1, 1, 1, 0, 0]);

        let e = encode("a b c a b c a b", &v, 4).unwrap();
        assert_eq!(e.true_len, 4);
        assert_eq!(e.mask, vec![1; 4]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(&corpus(&["x y z", "y"]), 1, None).unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
