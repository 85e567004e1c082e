//! A deterministic n-gram-style table model.
//!
//! Lookup backs off from the longest stored suffix of the prefix down to the
//! empty context, then falls back to the default logits. No weighting is
//! applied on backoff; the longest match simply wins.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::LogitVector;
use crate::sources::{LogitSource, StepOutput};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone)]
pub struct TableLm {
    vocab: Vocabulary,
    order: usize,
    entries: HashMap<Vec<TokenId>, LogitVector>,
    default_logits: LogitVector,
}

/// On-disk schema. Field names are part of the file format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    vocab: Vec<String>,
    order: usize,
    default: Vec<f64>,
    entries: Vec<TableEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    prefix: Vec<TokenId>,
    logits: Vec<f64>,
}

impl TableLm {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        entries: Vec<(Vec<TokenId>, LogitVector)>,
        default_logits: LogitVector,
    ) -> Result<Self> {
        if default_logits.len() != vocab.size() {
            return Err(Error::InvalidInput(format!(
                "default logits length {} does not match vocabulary size {}",
                default_logits.len(),
                vocab.size()
            )));
        }
        let mut map = HashMap::with_capacity(entries.len());
        for (prefix, logits) in entries {
            if prefix.len() > order {
                return Err(Error::InvalidInput(format!(
                    "entry prefix {prefix:?} longer than model order {order}"
                )));
            }
            if let Some(&bad) = prefix.iter().find(|&&id| !vocab.contains_id(id)) {
                return Err(Error::InvalidInput(format!(
                    "entry prefix {prefix:?} contains out-of-vocabulary id {bad}"
                )));
            }
            if logits.len() != vocab.size() {
                return Err(Error::InvalidInput(format!(
                    "entry for prefix {prefix:?} has {} logits, vocabulary has {}",
                    logits.len(),
                    vocab.size()
                )));
            }
            map.insert(prefix, logits);
        }
        Ok(TableLm {
            vocab,
            order,
            entries: map,
            default_logits,
        })
    }

    /// Parse and validate a model file (see the README for the JSON schema).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let vocab = Vocabulary::new(file.vocab).map_err(|e| Error::Schema {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        let default_logits = LogitVector::new(file.default).map_err(|e| Error::Schema {
            path: origin.to_string(),
            message: format!("default logits: {e}"),
        })?;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (idx, entry) in file.entries.into_iter().enumerate() {
            let logits = LogitVector::new(entry.logits).map_err(|e| Error::Schema {
                path: origin.to_string(),
                message: format!("entry {idx} (prefix {:?}): {e}", entry.prefix),
            })?;
            entries.push((entry.prefix, logits));
        }
        Self::new(vocab, file.order, entries, default_logits).map_err(|e| Error::Schema {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut entries: Vec<TableEntry> = self
            .entries
            .iter()
            .map(|(prefix, logits)| TableEntry {
                prefix: prefix.clone(),
                logits: logits.values().to_vec(),
            })
            .collect();
        entries.sort_by(|a, b| a.prefix.cmp(&b.prefix));
        let file = TableFile {
            vocab: self.vocab.tokens().to_vec(),
            order: self.order,
            default: self.default_logits.values().to_vec(),
            entries,
        };
        serde_json::to_string_pretty(&file).expect("table file serializes")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Longest-suffix table hit, else the default logits.
    pub fn next_logits(&self, prefix: &[TokenId]) -> Result<&LogitVector> {
        if let Some(&bad) = prefix.iter().find(|&&id| !self.vocab.contains_id(id)) {
            return Err(Error::InvalidInput(format!(
                "prefix contains out-of-vocabulary id {bad}"
            )));
        }
        let longest = self.order.min(prefix.len());
        for take in (0..=longest).rev() {
            let key = &prefix[prefix.len() - take..];
            if let Some(hit) = self.entries.get(key) {
                return Ok(hit);
            }
        }
        Ok(&self.default_logits)
    }
}

impl LogitSource for TableLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        Ok(StepOutput::Full(self.next_logits(prefix)?.clone()))
    }
}

/// File-loading entry point used by the CLI's source dispatch.
pub fn load_table_lm(path: impl AsRef<Path>) -> Result<TableLm> {
    TableLm::load(path)
}
