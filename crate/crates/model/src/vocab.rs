//! Word-level vocabulary with five reserved ids. The tokenizer lowercases
//! and splits on anything non-alphanumeric; out-of-vocabulary tokens map
//! to [UNK]. Replacing this with a subword tokenizer only touches this
//! module.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{ModelError, Result};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const MASK_ID: u32 = 3;
pub const UNK_ID: u32 = 4;
pub const NUM_RESERVED: u32 = 5;

pub const RESERVED_TOKENS: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

/// Structural tokens: never maskable, excluded from lexicon pooling.
/// [UNK] stands in for a real word, so it is not structural.
pub fn is_structural(id: u32) -> bool {
    matches!(id, PAD_ID | CLS_ID | SEP_ID | MASK_ID)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from corpus lines: count word frequencies, keep the most
    /// frequent up to `max_size` total ids (reserved included). Ties break
    /// lexicographically, so rebuilding on the same corpus reproduces the
    /// same id assignment.
    pub fn build<'a>(lines: impl Iterator<Item = &'a str>, max_size: usize) -> Result<Vocabulary> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in lines {
            for token in tokenize(line) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(ModelError::InvalidConfig("empty corpus for vocabulary".into()));
        }
        if max_size <= NUM_RESERVED as usize {
            return Err(ModelError::InvalidConfig(format!(
                "vocabulary size {max_size} leaves no room beyond the {NUM_RESERVED} reserved ids"
            )));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_RESERVED as usize);

        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Vocabulary::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, lookup }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.lookup.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Tokenize and map to ids with the [UNK] fallback.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).into_iter().map(|t| self.id(&t)).collect()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n")
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidConfig(format!("cannot read vocabulary: {e}")))?;
        let tokens: Vec<String> = content.lines().map(|l| l.to_string()).collect();
        if tokens.len() < NUM_RESERVED as usize
            || tokens[..NUM_RESERVED as usize] != RESERVED_TOKENS.map(String::from)
        {
            return Err(ModelError::InvalidConfig(
                "vocabulary file does not start with the reserved tokens".into(),
            ));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Lowercase; token characters are alphanumeric, everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect()
}

/// Wrap content ids as `[CLS] content [SEP]`, truncating the content to fit
/// `max_len` total positions.
pub fn prepare_sequence(content: &[u32], max_len: usize) -> Vec<u32> {
    let keep = content.len().min(max_len.saturating_sub(2));
    let mut out = Vec::with_capacity(keep + 2);
    out.push(CLS_ID);
    out.extend_from_slice(&content[..keep]);
    out.push(SEP_ID);
    out
}
