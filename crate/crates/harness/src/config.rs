use std::path::{Path, PathBuf};

use hardsplit_core::classifiers::BaseConfig;
use hardsplit_core::pipeline::RetrainConfig;
use hardsplit_core::thresholding::ToleranceConfig;
use hardsplit_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::split::SplitFractions;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Sparse {
        path: PathBuf,
        #[serde(default)]
        n_features: Option<usize>,
    },
    Synthetic(SyntheticSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitFractions,
    pub tolerance: ToleranceConfig,
    pub base: BaseConfig,
    /// Number of features kept by top-K selection; 0 disables selection.
    pub top_k: usize,
    pub retrain: RetrainConfig,
    /// Retrainer whose pipeline is saved.
    pub retrainer: String,
    /// Further retrainers evaluated on the same difficult sets.
    pub baselines: Vec<String>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::default(),
            split: SplitFractions::default(),
            tolerance: ToleranceConfig::default(),
            base: BaseConfig::default(),
            top_k: 0,
            retrain: RetrainConfig::default(),
            retrainer: "guided".into(),
            baselines: vec!["classic".into()],
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are resolved against the config file.
        if let Some(dir) = path.parent() {
            match &mut cfg.data {
                DataSource::Csv { path } | DataSource::Sparse { path, .. } if path.is_relative() => {
                    *path = dir.join(&*path);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if !(self.tolerance.x >= 0.0 && self.tolerance.x <= 100.0 && self.tolerance.y >= 0.0 && self.tolerance.y <= 100.0) {
            return Err(Error::Config("tolerances must lie in [0, 100]".into()));
        }
        self.retrain.contrastive.validate()?;
        self.retrain.auxiliary.validate()?;
        Ok(())
    }
}
