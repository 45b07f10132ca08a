//! Two-class Gaussian data with an optional planted XOR signal.
//!
//! Classes differ only along feature 0. With `planted` set, a fraction of each
//! class is moved into a band around the midpoint of the two means, and every
//! sample whose feature 0 lies in that band gets features 1 and 2 rewritten so
//! that `label == (x1 > 0) xor (x2 > 0)`. A linear model sees no signal there;
//! a nonlinear one can recover the label exactly.

use hardsplit_core::rng::{derive_seed, seeded};
use hardsplit_core::{Error, FeatureMatrix, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Smallest magnitude of a planted XOR feature.
const XOR_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub dim: usize,
    /// Class means along feature 0.
    pub mean_neg: f64,
    pub mean_pos: f64,
    /// Shared per-feature variance.
    pub cov_scale: f64,
    pub planted: bool,
    /// Fraction of each class placed inside the band.
    pub band_fraction: f64,
    /// Half-width of the band around the midpoint of the means.
    pub band_half_width: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 2000,
            dim: 10,
            mean_neg: -4.0,
            mean_pos: 4.0,
            cov_scale: 1.0,
            planted: true,
            band_fraction: 0.25,
            band_half_width: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if self.dim < 2 || (self.planted && self.dim < 3) {
            return bad(format!("dimension {} too small (2 needed, 3 with planted structure)", self.dim));
        }
        if !(self.cov_scale >= 0.0 && self.cov_scale.is_finite()) {
            return bad(format!("covariance scale must be non-negative, got {}", self.cov_scale));
        }
        if !((0.0..=1.0).contains(&self.band_fraction) && self.band_half_width > 0.0) {
            return bad("band fraction must lie in [0, 1] and band half-width be positive".into());
        }
        if !(self.mean_neg.is_finite() && self.mean_pos.is_finite()) {
            return bad("class means must be finite".into());
        }
        Ok(())
    }

    pub fn band_centre(&self) -> f64 {
        (self.mean_neg + self.mean_pos) / 2.0
    }

    /// Whether a sample's feature 0 lies in the planted band.
    pub fn in_band(&self, x0: f64) -> bool {
        self.planted && (x0 - self.band_centre()).abs() <= self.band_half_width
    }
}

/// The XOR rule that determines labels inside the band.
pub fn xor_rule(x1: f64, x2: f64) -> u8 {
    u8::from((x1 > 0.0) != (x2 > 0.0))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let mut rng = seeded(derive_seed(spec.seed, "synthetic"));
    let noise = Normal::new(0.0, spec.cov_scale.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let n_band = (spec.band_fraction * spec.n_per_class as f64).round() as usize;
    let (lo, hi) = (spec.band_centre() - spec.band_half_width, spec.band_centre() + spec.band_half_width);
    let mut values = Vec::with_capacity(2 * spec.n_per_class * spec.dim);
    let mut labels = Vec::with_capacity(2 * spec.n_per_class);
    for label in [0u8, 1] {
        let mean = if label == 1 { spec.mean_pos } else { spec.mean_neg };
        for i in 0..spec.n_per_class {
            let mut row: Vec<f64> = (0..spec.dim).map(|_| noise.sample(&mut rng)).collect();
            row[0] += mean;
            if spec.planted && i < n_band {
                row[0] = rng.random_range(lo..=hi);
            }
            if spec.in_band(row[0]) {
                let s1 = rng.random_bool(0.5);
                let s2 = s1 != (label == 1);
                let mag = |rng: &mut hardsplit_core::rng::Rng| rng.random_range(XOR_MARGIN..XOR_MARGIN + 1.0);
                row[1] = if s1 { mag(&mut rng) } else { -mag(&mut rng) };
                row[2] = if s2 { mag(&mut rng) } else { -mag(&mut rng) };
            }
            values.extend(row);
            labels.push(label);
        }
    }
    FeatureMatrix::new(spec.dim, values, labels)
}
