//! The Filter stage: keep tokens whose information content lies within
//! `epsilon` nats of the distribution's entropy, zero the rest, renormalize.

use serde::{Deserialize, Serialize};

use crate::dist::{entropy, ProbDist};
use crate::error::{Error, Result};
use crate::TokenId;

/// Absolute slack on the band edges. Without it a uniform distribution can
/// fail a zero-width band by one ulp of `ln |V|`.
pub const BAND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterParams {
    pub epsilon: f64,
}

impl FilterParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        let p = FilterParams { epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Parameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn commongen() -> Self {
        FilterParams { epsilon: 0.1 }
    }

    pub fn rocstories() -> Self {
        FilterParams { epsilon: 0.2 }
    }

    pub fn adgen() -> Self {
        FilterParams { epsilon: 0.95 }
    }
}

impl Default for FilterParams {
    fn default() -> Self {
        Self::commongen()
    }
}

/// `|Ent(q) − I(t)|`, or `None` for a zero-probability token.
pub fn band_distance(dist: &ProbDist, ent: f64, token: TokenId) -> Option<f64> {
    let p = dist.prob(token);
    (p > 0.0).then(|| (ent + p.ln()).abs())
}

pub fn passes(dist: &ProbDist, token: TokenId, params: &FilterParams) -> bool {
    let ent = entropy(dist);
    band_distance(dist, ent, token).is_some_and(|d| d <= params.epsilon + BAND_SLACK)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub dist: ProbDist,
    pub survivors: usize,
    /// No token was inside the band and the closest one was kept instead.
    pub fallback: bool,
}

pub fn filter(dist: &ProbDist, params: &FilterParams) -> ProbDist {
    filter_detailed(dist, params).dist
}

/// When no token survives, the single token with the smallest band distance
/// is kept (ties to the lowest id). When every supported token survives the
/// input is returned unchanged.
pub fn filter_detailed(dist: &ProbDist, params: &FilterParams) -> FilterOutcome {
    let ent = entropy(dist);
    let p = dist.as_slice();
    let mut keep = vec![false; p.len()];
    let mut survivors = 0;
    let mut support = 0;
    let mut closest: Option<(TokenId, f64)> = None;
    for (t, slot) in keep.iter_mut().enumerate() {
        let Some(d) = band_distance(dist, ent, t) else { continue };
        support += 1;
        if d <= params.epsilon + BAND_SLACK {
            *slot = true;
            survivors += 1;
        }
        if closest.is_none_or(|(_, best)| d < best) {
            closest = Some((t, d));
        }
    }
    if survivors == support {
        return FilterOutcome {
            dist: dist.clone(),
            survivors,
            fallback: false,
        };
    }
    if survivors == 0 {
        let (t, _) = closest.expect("a valid distribution has support");
        return FilterOutcome {
            dist: ProbDist::point(p.len(), t).expect("token in range"),
            survivors: 1,
            fallback: true,
        };
    }
    let weights: Vec<f64> = p.iter().zip(&keep).map(|(&x, &k)| if k { x } else { 0.0 }).collect();
    FilterOutcome {
        dist: ProbDist::normalize(&weights).expect("survivors carry mass"),
        survivors,
        fallback: false,
    }
}
