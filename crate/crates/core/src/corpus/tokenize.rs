use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::MASK_TOKEN;

/// Fixed sequence length after truncation/padding.
pub const SEQ_LEN: usize = 128;
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;

const SPECIALS: [&str; 3] = ["[PAD]", "[UNK]", MASK_TOKEN];

/// Splits text into lowercase word and punctuation tokens; `[MASK]` is kept
/// as a single token.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix(MASK_TOKEN) {
            out.push(MASK_TOKEN.to_string());
            rest = tail;
            continue;
        }
        let c = rest.chars().next().unwrap_or(' ');
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
        } else if c.is_alphanumeric() {
            let end = rest
                .char_indices()
                .find(|&(_, ch)| !ch.is_alphanumeric())
                .map_or(rest.len(), |(i, _)| i);
            out.push(rest[..end].to_lowercase());
            rest = &rest[end..];
        } else {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

/// Word-level vocabulary; ids 0..3 are `[PAD]`, `[UNK]`, `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_list(tokens)
    }

    fn from_list(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary from texts keeping words seen at least `min_count`
    /// times. Ordering is by descending count, then lexically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !SPECIALS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(w, _)| w));
        Self::from_list(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let tokens: Vec<String> = serde_json::from_str(text)?;
        Ok(Self::from_list(tokens))
    }
}

/// Token ids padded/truncated to [`SEQ_LEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub valid_len: usize,
    pub mask_positions: Vec<usize>,
    /// Set when truncation removed at least one mask token.
    pub dropped_mask: bool,
}

impl TokenSequence {
    pub fn valid_ids(&self) -> &[usize] {
        &self.ids[..self.valid_len]
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSequence {
    tokenize_with_len(text, vocab, SEQ_LEN)
}

/// Like [`tokenize`] with an explicit sequence length.
pub fn tokenize_with_len(text: &str, vocab: &Vocab, len: usize) -> TokenSequence {
    let all: Vec<usize> = words(text).iter().map(|w| vocab.id(w)).collect();
    let valid_len = all.len().min(len);
    let dropped_mask = all[valid_len..].contains(&MASK_ID);
    let mut ids = all;
    ids.truncate(valid_len);
    let mask_positions = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == MASK_ID)
        .map(|(i, _)| i)
        .collect();
    ids.resize(len, PAD_ID);
    TokenSequence {
        ids,
        valid_len,
        mask_positions,
        dropped_mask,
    }
}
