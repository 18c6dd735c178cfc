//! Probability vectors over a vocabulary and the numeric primitives shared by
//! every transform: normalization, extremeness clamping, entropy and
//! information content. All logarithms are natural (nats).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Tolerance on the unit-sum invariant of [`ProbDist`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A normalized probability vector indexed by token id.
///
/// Every entry lies in `[0, 1]` and the entries sum to one within
/// [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Validates an already-normalized vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate(&probs)?;
        Ok(ProbDist { probs })
    }

    /// Scales nonnegative weights to unit sum. Zero entries stay zero.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("entry {i} is {w}")));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::InvalidWeights("no strictly positive entry".into()));
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Ok(ProbDist { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWeights("empty vocabulary".into()));
        }
        Ok(ProbDist {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// One-hot distribution on `token`.
    pub fn point(n: usize, token: TokenId) -> Result<Self> {
        if token >= n {
            return Err(Error::Parameter(format!("token {token} outside vocabulary of {n}")));
        }
        let mut probs = vec![0.0; n];
        probs[token] = 1.0;
        Ok(ProbDist { probs })
    }

    /// Skips validation. Callers must uphold the invariants.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(validate(&probs).is_ok(), "{:?}", validate(&probs));
        ProbDist { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    /// Ids with strictly positive probability, ascending.
    pub fn support(&self) -> Vec<TokenId> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Argmax; ties resolve to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

impl<'de> Deserialize<'de> for ProbDist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        ProbDist::new(probs).map_err(serde::de::Error::custom)
    }
}

fn validate(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidWeights("empty distribution".into()));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidWeights(format!("entry {i} = {p} outside [0, 1]")));
        }
    }
    let total = compensated_sum(probs.iter().copied());
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidWeights(format!("entries sum to {total}")));
    }
    Ok(())
}

/// How close to 0 or 1 a probability may get before it is pulled back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremenessPolicy {
    threshold: f64,
}

impl ExtremenessPolicy {
    pub const DEFAULT_THRESHOLD: f64 = 1e-6;

    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 0.5) {
            return Err(Error::Parameter(format!(
                "extremeness threshold must lie in (0, 0.5), got {threshold}"
            )));
        }
        Ok(ExtremenessPolicy { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for ExtremenessPolicy {
    fn default() -> Self {
        ExtremenessPolicy {
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

/// Raises entries in `(0, threshold)` to `threshold`, lowers entries above
/// `1 - threshold` to `1 - threshold`, then renormalizes once.
///
/// Exact zeros are left alone: a zero may come from the information filter
/// and means the token was removed.
pub fn clamp_extremes(dist: &ProbDist, policy: ExtremenessPolicy) -> ProbDist {
    let lo = policy.threshold;
    let hi = 1.0 - policy.threshold;
    let mut changed = false;
    let clamped: Vec<f64> = dist
        .probs
        .iter()
        .map(|&p| {
            if p > 0.0 && p < lo {
                changed = true;
                lo
            } else if p > hi {
                changed = true;
                hi
            } else {
                p
            }
        })
        .collect();
    if !changed {
        return dist.clone();
    }
    let total = compensated_sum(clamped.iter().copied());
    ProbDist::from_vec_unchecked(clamped.into_iter().map(|p| p / total).collect())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &ProbDist) -> f64 {
    let h = -compensated_sum(dist.probs.iter().filter(|p| **p > 0.0).map(|&p| p * p.ln()));
    h.max(0.0)
}

/// Surprisal `-ln q(t)` of a single token.
pub fn information(dist: &ProbDist, token: TokenId) -> Result<f64> {
    let p = dist.prob(token);
    if p <= 0.0 {
        return Err(Error::UndefinedInformation(token));
    }
    Ok(-p.ln())
}
