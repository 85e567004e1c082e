//! Per-step score vectors and the steering combination rules.
//!
//! All arithmetic is 64-bit. Entries are finite or `-inf`; `-inf` marks a
//! token with zero probability mass. The central operation shifts a base
//! distribution by the scaled difference of two proxy distributions:
//! `base + alpha * (pos - neg)`, sampled greedily downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Default clamp for `-inf` proxy entries; see [`combine`].
pub const DEFAULT_LOGIT_FLOOR: f64 = -30.0;

/// Raw per-token scores over a vocabulary (logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Entries must be finite or `-inf`; `NaN` and `+inf` are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("logit vector must be non-empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() || *v == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "logit at id {i} is {v}; entries must be finite or -inf"
                )));
            }
        }
        Ok(LogitVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.values.get(id as usize).copied()
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LogitVector::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Vec<f64> {
        v.values
    }
}

/// Normalized log-probabilities: finite entries exp-sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LogProbVector {
    values: Vec<f64>,
}

impl LogProbVector {
    /// Validates normalization to 1e-9; mostly produced via [`log_softmax`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "log-prob vector must be non-empty".into(),
            ));
        }
        let mut sum = 0.0;
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() || *v == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "log-prob at id {i} is {v}; entries must be finite or -inf"
                )));
            }
            if v.is_finite() {
                sum += v.exp();
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "log-probs exp-sum to {sum}, expected 1"
            )));
        }
        Ok(LogProbVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.values.get(id as usize).copied()
    }
}

/// The `k` highest log-probabilities of a step, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(TokenId, f64)>", into = "Vec<(TokenId, f64)>")]
pub struct TopKLogProbs {
    entries: Vec<(TokenId, f64)>,
}

impl TopKLogProbs {
    pub fn new(entries: Vec<(TokenId, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("top-k list must be non-empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, (id, lp)) in entries.iter().enumerate() {
            if lp.is_nan() || *lp == f64::INFINITY {
                return Err(Error::InvalidInput(format!(
                    "top-k log-prob for token {id} is {lp}"
                )));
            }
            if !seen.insert(*id) {
                return Err(Error::InvalidInput(format!(
                    "duplicate token id {id} in top-k list"
                )));
            }
            if i > 0 && entries[i - 1].1 < *lp {
                return Err(Error::InvalidInput(
                    "top-k log-probs must be non-increasing".into(),
                ));
            }
        }
        Ok(TopKLogProbs { entries })
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }
}

impl TryFrom<Vec<(TokenId, f64)>> for TopKLogProbs {
    type Error = Error;

    fn try_from(entries: Vec<(TokenId, f64)>) -> Result<Self> {
        TopKLogProbs::new(entries)
    }
}

impl From<TopKLogProbs> for Vec<(TokenId, f64)> {
    fn from(t: TopKLogProbs) -> Vec<(TokenId, f64)> {
        t.entries
    }
}

/// Whether steering sees the full vocabulary or only the base top-k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteerMode {
    Full,
    TopK,
}

/// Steering strength and decode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    /// Unbounded; positive amplifies the positive proxy's preferences.
    pub alpha: f64,
    pub mode: SteerMode,
    /// Candidate count in top-k mode.
    pub k: usize,
    /// Substitute for `-inf` proxy entries before differencing.
    pub logit_floor: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            alpha: 1.0,
            mode: SteerMode::Full,
            k: 5,
            logit_floor: DEFAULT_LOGIT_FLOOR,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "alpha must be finite, got {}",
                self.alpha
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if !self.logit_floor.is_finite() {
            return Err(Error::InvalidInput(format!(
                "logit floor must be finite, got {}",
                self.logit_floor
            )));
        }
        Ok(())
    }
}

/// `v - logsumexp(v)`, max-subtracted for stability.
///
/// `-inf` inputs stay `-inf`. Errors when no entry is finite.
///
/// ```
/// use steer_core::logits::{log_softmax, LogitVector};
/// let lp = log_softmax(&LogitVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
/// assert!((lp.values()[0] - (-std::f64::consts::LN_2)).abs() < 1e-15);
/// ```
pub fn log_softmax(v: &LogitVector) -> Result<LogProbVector> {
    let max = v
        .values
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateDistribution);
    }
    let sum: f64 = v
        .values
        .iter()
        .filter(|x| x.is_finite())
        .map(|x| (x - max).exp())
        .sum();
    let lse = max + sum.ln();
    let values = v
        .values
        .iter()
        .map(|&x| {
            if x.is_finite() {
                x - lse
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(LogProbVector { values })
}

/// `base + alpha * (pos - neg)` elementwise, with the default `-inf` floor.
///
/// `-inf` in `base` is preserved (the base hard-masks the token); `-inf` in
/// either proxy is clamped to the floor first, so proxies can discourage a
/// token but never veto it. `alpha = 0` and `pos = neg` return `base`
/// bit-for-bit.
pub fn combine(
    base: &LogitVector,
    pos: &LogitVector,
    neg: &LogitVector,
    alpha: f64,
) -> Result<LogitVector> {
    combine_with_floor(base, pos, neg, alpha, DEFAULT_LOGIT_FLOOR)
}

/// [`combine`] with an explicit clamp for `-inf` proxy entries.
pub fn combine_with_floor(
    base: &LogitVector,
    pos: &LogitVector,
    neg: &LogitVector,
    alpha: f64,
    floor: f64,
) -> Result<LogitVector> {
    if pos.len() != base.len() {
        return Err(Error::VocabIncompatible {
            position: base.len().min(pos.len()),
            detail: format!("positive proxy length {} vs base {}", pos.len(), base.len()),
        });
    }
    if neg.len() != base.len() {
        return Err(Error::VocabIncompatible {
            position: base.len().min(neg.len()),
            detail: format!("negative proxy length {} vs base {}", neg.len(), base.len()),
        });
    }
    if alpha == 0.0 {
        return Ok(base.clone());
    }
    let clamp = |x: f64| if x.is_finite() { x } else { floor };
    let values = base
        .values
        .iter()
        .zip(pos.values.iter().zip(neg.values.iter()))
        .map(|(&b, (&p, &n))| {
            let delta = clamp(p) - clamp(n);
            // delta == 0 keeps the base entry bit-identical (pos == neg case).
            if delta == 0.0 {
                b
            } else {
                b + alpha * delta
            }
        })
        .collect();
    Ok(LogitVector { values })
}

/// Id of the maximal entry; ties break toward the lowest id.
pub fn argmax_token(v: &LogitVector) -> Result<TokenId> {
    let mut best: Option<(TokenId, f64)> = None;
    for (i, &x) in v.values.iter().enumerate() {
        if !x.is_finite() {
            continue;
        }
        match best {
            Some((_, bx)) if bx >= x => {}
            _ => best = Some((i as TokenId, x)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::DegenerateDistribution)
}

/// Black-box steering: reweight exactly the base top-k candidates.
///
/// Each candidate scores `base_logprob + alpha * (pos - neg)` and the output
/// probabilities are the softmax over those k scores alone. Proxy entries are
/// taken at the candidate ids; `-inf` proxy values are clamped to the default
/// floor.
pub fn topk_reweight(
    base: &TopKLogProbs,
    pos: &LogProbVector,
    neg: &LogProbVector,
    alpha: f64,
) -> Result<Vec<(TokenId, f64)>> {
    topk_reweight_with_floor(base, pos, neg, alpha, DEFAULT_LOGIT_FLOOR)
}

/// [`topk_reweight`] with an explicit clamp for `-inf` proxy entries.
pub fn topk_reweight_with_floor(
    base: &TopKLogProbs,
    pos: &LogProbVector,
    neg: &LogProbVector,
    alpha: f64,
    floor: f64,
) -> Result<Vec<(TokenId, f64)>> {
    let clamp = |x: f64| if x.is_finite() { x } else { floor };
    let mut scores = Vec::with_capacity(base.k());
    for &(id, base_lp) in base.entries() {
        let p = pos.get(id).ok_or_else(|| Error::VocabIncompatible {
            position: id as usize,
            detail: format!(
                "candidate token {id} outside positive proxy vocabulary of size {}",
                pos.len()
            ),
        })?;
        let n = neg.get(id).ok_or_else(|| Error::VocabIncompatible {
            position: id as usize,
            detail: format!(
                "candidate token {id} outside negative proxy vocabulary of size {}",
                neg.len()
            ),
        })?;
        let score = if base_lp.is_finite() {
            base_lp + alpha * (clamp(p) - clamp(n))
        } else {
            f64::NEG_INFINITY
        };
        scores.push((id, score));
    }
    // Softmax over the k scores only.
    let max = scores
        .iter()
        .map(|&(_, s)| s)
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateDistribution);
    }
    let total: f64 = scores
        .iter()
        .map(|&(_, s)| if s.is_finite() { (s - max).exp() } else { 0.0 })
        .sum();
    Ok(scores
        .into_iter()
        .map(|(id, s)| {
            let p = if s.is_finite() {
                (s - max).exp() / total
            } else {
                0.0
            };
            (id, p)
        })
        .collect())
}
