//! Black-box emulation: restrict a white-box source to its top-k.

use crate::error::{Error, Result};
use crate::logits::{log_softmax, TopKLogProbs};
use crate::sources::{LogitSource, StepOutput};
use crate::vocab::{TokenId, Vocabulary};

/// Wrapper that exposes only the k most likely tokens of the inner source,
/// as log-probabilities, the way a limited API would.
#[derive(Debug, Clone)]
pub struct TopKRestricted<S> {
    inner: S,
    k: usize,
}

/// Wrap `src` so `next_step` yields the top-k of `log_softmax(src.next_step(..))`.
///
/// Ties at the cutoff keep the lower token id, consistent with argmax
/// tie-breaking. `k` larger than the vocabulary yields every token.
pub fn restrict_topk<S: LogitSource>(src: S, k: usize) -> Result<TopKRestricted<S>> {
    if k < 1 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(TopKRestricted { inner: src, k })
}

impl<S> TopKRestricted<S> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: LogitSource> LogitSource for TopKRestricted<S> {
    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }

    fn next_step(&self, prefix: &[TokenId]) -> Result<StepOutput> {
        match self.inner.next_step(prefix)? {
            StepOutput::Full(logits) => {
                let lp = log_softmax(&logits)?;
                let mut pairs: Vec<(TokenId, f64)> = lp
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(id, &v)| (id as TokenId, v))
                    .collect();
                pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                pairs.truncate(self.k);
                Ok(StepOutput::TopK(TopKLogProbs::new(pairs)?))
            }
            StepOutput::TopK(topk) => {
                let mut entries = topk.entries().to_vec();
                entries.truncate(self.k);
                Ok(StepOutput::TopK(TopKLogProbs::new(entries)?))
            }
        }
    }
}
