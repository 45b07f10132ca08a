//! Mapping raw base-classifier scores onto positive-class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of a decision-score population and the probability range it maps to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub f_min: f64,
    pub f_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl ScoreRange {
    pub fn new(f_min: f64, f_max: f64) -> Result<Self> {
        if !f_min.is_finite() || !f_max.is_finite() || f_min > f_max {
            return Err(Error::InvalidInput(format!(
                "invalid score range [{f_min}, {f_max}]"
            )));
        }
        Ok(Self {
            f_min,
            f_max,
            p_min: 0.0,
            p_max: 1.0,
        })
    }

    /// Range spanned by every score in `scores`.
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &s in scores {
            if !s.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite score {s}")));
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if lo > hi {
            return Err(Error::Empty("score population".into()));
        }
        Self::new(lo, hi)
    }
}

/// Min-max interpolation of `f` from `[f_lo, f_hi]` onto `[p_lo, p_hi]`;
/// a zero-width source maps to the middle of the target.
fn min_max(f: f64, f_lo: f64, f_hi: f64, p_lo: f64, p_hi: f64) -> f64 {
    if f_hi > f_lo {
        (f - f_lo) / (f_hi - f_lo) * (p_hi - p_lo) + p_lo
    } else {
        0.5 * (p_lo + p_hi)
    }
}

/// Piecewise min-max transform of signed decision scores.
///
/// Non-negative scores are interpolated from `[0, f_max]` onto `[0.5, 1]`,
/// negative scores from `[f_min, 0]` onto `[0, 0.5)`. Scores outside the
/// range clamp to its ends, and the sign of the score always agrees with
/// `p >= 0.5`.
pub fn decision_to_probability(scores: &[f64], range: &ScoreRange) -> Result<Vec<f64>> {
    let below_half = 0.5f64.next_down();
    let mid = 0.5 * (range.p_min + range.p_max);
    scores
        .iter()
        .map(|&f| {
            if !f.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite score {f}")));
            }
            let p = if f >= 0.0 || range.f_min >= 0.0 {
                min_max(f, 0.0, range.f_max.max(0.0), mid, range.p_max)
            } else {
                min_max(f, range.f_min, 0.0, range.p_min, mid)
            };
            Ok(if f >= 0.0 {
                p.clamp(mid, range.p_max)
            } else {
                p.clamp(range.p_min, below_half)
            })
        })
        .collect()
}

/// The transform a pipeline applies to its base classifier's raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProbabilityAdapter {
    Identity,
    MinMax(ScoreRange),
}

impl ProbabilityAdapter {
    pub fn apply(&self, scores: &[f64]) -> Result<Vec<f64>> {
        match self {
            ProbabilityAdapter::Identity => Ok(scores.to_vec()),
            ProbabilityAdapter::MinMax(range) => decision_to_probability(scores, range),
        }
    }
}
