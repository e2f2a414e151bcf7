//! Fixed-vocabulary tokenizer shared by the scorer and the policy.
//!
//! Tokenization is lowercase whitespace splitting against a closed word list;
//! anything unknown maps to the OOV id. The first four ids are reserved.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const OOV: TokenId = 3;

/// Number of reserved ids preceding the word list.
pub const SPECIALS: usize = 4;

const SPECIAL_NAMES: [&str; SPECIALS] = ["<pad>", "<bos>", "<eos>", "<oov>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from a word list. Words must be lowercase, unique,
    /// free of whitespace, and distinct from the reserved names.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(Error::InvalidInput(format!(
                    "vocabulary word {w:?} must be lowercase and whitespace-free"
                )));
            }
            if SPECIAL_NAMES.contains(&w.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "vocabulary word {w:?} collides with a reserved token"
                )));
            }
            if index.insert(w.clone(), SPECIALS + i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocab { words, index })
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(mut self) -> Result<Self> {
        let words = std::mem::take(&mut self.words);
        Vocab::new(words)
    }

    pub fn size(&self) -> usize {
        SPECIALS + self.words.len()
    }

    /// Id of a single word; unknown words map to OOV.
    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(OOV)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: TokenId) -> &str {
        if id < SPECIALS {
            SPECIAL_NAMES[id]
        } else {
            &self.words[id - SPECIALS]
        }
    }

    /// Lowercases, splits on whitespace, and maps each piece to an id.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()))
            .collect()
    }

    /// Maps pre-split word tokens to ids (no further splitting).
    pub fn ids(&self, words: &[String]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
