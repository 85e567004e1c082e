//! Token vocabularies shared by all distribution sources.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 0-based token id.
pub type TokenId = u32;

/// An ordered list of unique token strings; ids are list positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidInput("vocabulary must be non-empty".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate token {tok:?} in vocabulary"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Whitespace-split encoding: every word must be a vocabulary token.
    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|word| {
                self.id_of(word)
                    .ok_or_else(|| Error::InvalidInput(format!("token {word:?} not in vocabulary")))
            })
            .collect()
    }

    /// Inverse of [`encode_text`](Self::encode_text): joins tokens with single spaces.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::InvalidInput(format!("token id {id} out of vocabulary")))?;
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.tokens
    }
}

/// Ok iff both vocabularies list identical tokens in identical order.
///
/// On mismatch the error names the first disagreeing position; for a pure
/// size mismatch that is the length of the shorter vocabulary.
pub fn check_vocab_compat(a: &Vocabulary, b: &Vocabulary) -> Result<()> {
    let common = a.size().min(b.size());
    for pos in 0..common {
        if a.tokens[pos] != b.tokens[pos] {
            return Err(Error::VocabIncompatible {
                position: pos,
                detail: format!("{:?} vs {:?}", a.tokens[pos], b.tokens[pos]),
            });
        }
    }
    if a.size() != b.size() {
        return Err(Error::VocabIncompatible {
            position: common,
            detail: format!("sizes differ: {} vs {}", a.size(), b.size()),
        });
    }
    Ok(())
}
