use hardsplit_core::rng::{derive_seed, seeded};
use hardsplit_core::{Error, FeatureMatrix, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if !parts.iter().all(|&f| f > 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: FeatureMatrix,
    pub validation: FeatureMatrix,
    pub test: FeatureMatrix,
}

/// Stratified, seeded three-way split. Within each class the validation and
/// test shares are rounded and the remainder goes to training; every class
/// contributes at least one sample to each part. Rows keep ascending id order.
pub fn split_80_10_10(data: &FeatureMatrix, fractions: &SplitFractions, seed: u64) -> Result<DataSplits> {
    fractions.validate()?;
    if data.n_samples() < 10 {
        return Err(Error::InvalidInput(format!("{} samples is too few to split (need 10)", data.n_samples())));
    }
    let mut rng = seeded(derive_seed(seed, "split"));
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in [0u8, 1] {
        let mut pos: Vec<usize> = (0..data.n_samples()).filter(|&i| data.labels()[i] == label).collect();
        if pos.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "class {label} has {} samples; each class needs at least 3",
                pos.len()
            )));
        }
        pos.shuffle(&mut rng);
        let n = pos.len() as f64;
        let n_val = ((n * fractions.validation).round() as usize).max(1);
        let n_test = ((n * fractions.test).round() as usize).max(1);
        let n_test = n_test.min(pos.len() - n_val - 1);
        parts[1].extend_from_slice(&pos[..n_val]);
        parts[2].extend_from_slice(&pos[n_val..n_val + n_test]);
        parts[0].extend_from_slice(&pos[n_val + n_test..]);
    }
    let [train, validation, test] = parts.map(|mut p| {
        p.sort_unstable();
        data.select_positions(&p)
    });
    Ok(DataSplits { train, validation, test })
}
