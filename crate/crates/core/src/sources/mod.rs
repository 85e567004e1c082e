//! Pluggable per-step distribution providers.
//!
//! Three kinds ship here: a deterministic file-backed table model for
//! desk-scale work, an HTTP client speaking the logprob wire protocol, and a
//! wrapper that restricts any white-box source to its top-k log-probabilities
//! the way a black-box API would.

mod http;
mod table;
mod topk;

pub use http::{http_next, HttpBackendConfig, HttpSource, RequestPayload, WireMode};
pub use table::{load_table_lm, TableLm};
pub use topk::{restrict_topk, TopKRestricted};

use crate::error::Result;
use crate::logits::{LogitVector, TopKLogProbs};
use crate::vocab::{TokenId, Vocabulary};

/// What a source yields for one step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    /// Scores for every vocabulary token.
    Full(LogitVector),
    /// Only the k most likely tokens, as log-probabilities.
    TopK(TopKLogProbs),
}

/// A next-token distribution provider.
///
/// `next_step` must be deterministic for a fixed prefix and configuration,
/// and in full mode must return a vector as long as the vocabulary.
pub trait LogitSource: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput>;
}

impl<S: LogitSource + ?Sized> LogitSource for &S {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        (**self).next_step(prefix)
    }
}

impl<S: LogitSource + ?Sized> LogitSource for Box<S> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        (**self).next_step(prefix)
    }
}
