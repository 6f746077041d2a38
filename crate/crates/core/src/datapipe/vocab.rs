use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const NULL_TOKEN: &str = "<NULL>";
pub const START_TOKEN: &str = "<START>";
pub const END_TOKEN: &str = "<END>";
pub const UNK_TOKEN: &str = "<UNK>";

pub const NULL: TokenId = 0;
pub const START: TokenId = 1;
pub const END: TokenId = 2;
pub const UNK: TokenId = 3;

pub const RESERVED: [&str; 4] = [NULL_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN];

/// Default minimum count for a word to get its own vocabulary entry.
pub const DEFAULT_MIN_FREQ: usize = 4;

/// Bijective token ↔ index map. Indices 0..4 are always the control
/// tokens `<NULL>`, `<START>`, `<END>`, `<UNK>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from a full ordered token list, which must start with the
    /// four control tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::Config(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of `token`, or `<UNK>`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VocabFile {
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        Self::from_tokens(file.tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Counts whitespace tokens over the training sentences and keeps those
/// seen at least `min_freq` times, most frequent first, ties in
/// lexicographic order.
pub fn build_vocab<'a, I>(sentences: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sentences {
        for tok in s.split_whitespace() {
            if !RESERVED.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    // BTreeMap order is lexicographic; a stable sort keeps it for ties.
    kept.sort_by_key(|k| std::cmp::Reverse(k.1));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_owned()))
        .collect();
    Vocabulary::from_tokens(tokens)
}
