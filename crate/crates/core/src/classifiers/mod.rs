//! Base classifiers.
//!
//! Every base model sits behind [`BaseClassifier`]; the learners that fit and
//! restore them are registered by name in a [`LearnerRegistry`] so the model
//! family can be picked from a config file or the command line.

mod adapter;
mod forest;
mod knn;
mod linear;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::store::{ParamReader, ParamWriter};

pub use adapter::{decision_to_probability, ProbabilityAdapter, ScoreRange};
pub use forest::{
    error_proxy_labels, error_proxy_probabilities, train_random_forest, ForestConfig, ForestLearner,
    ForestModel, Tree, TreeNode,
};
pub use knn::{knn_predict, KnnConfig, KnnLearner, NearestNeighborModel};
pub use linear::{
    train_linear_svm, train_logistic, LinearConfig, LinearKind, LinearModel, LogisticLearner,
    SvmLearner,
};

/// What a classifier's raw scores mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Already a positive-class probability in [0, 1].
    Probability,
    /// Unbounded signed decision value; needs a [`ScoreRange`] transform.
    Decision,
    /// Hard 0/1 probabilities; difficulty must come from an error proxy.
    Hard,
}

pub trait BaseClassifier: Send + Sync + Debug {
    /// Registry name of the learner that produced this model.
    fn kind(&self) -> &'static str;

    fn n_features(&self) -> usize;

    fn score_kind(&self) -> ScoreKind;

    /// Raw per-sample scores; see [`ScoreKind`] for their meaning.
    fn scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>>;

    /// Writes parameters and returns the manifest fragment that locates them.
    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value>;
}

pub trait BaseLearner: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(
        &self,
        data: &FeatureMatrix,
        cfg: &BaseConfig,
        seed: u64,
    ) -> Result<Box<dyn BaseClassifier>>;

    fn load(
        &self,
        manifest: &serde_json::Value,
        params: &ParamReader<'_>,
    ) -> Result<Box<dyn BaseClassifier>>;
}

/// Base classifier choice plus per-family hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    pub kind: String,
    pub linear: LinearConfig,
    pub forest: ForestConfig,
    pub knn: KnnConfig,
    /// Forest used as the error proxy for hard-probability bases.
    pub error_proxy: ForestConfig,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            kind: "svm".into(),
            linear: LinearConfig::default(),
            forest: ForestConfig::default(),
            knn: KnnConfig::default(),
            error_proxy: ForestConfig::default(),
        }
    }
}

pub(crate) fn check_width(expected: usize, data: &FeatureMatrix) -> Result<()> {
    if data.n_features() != expected {
        return Err(Error::Shape(format!(
            "model expects {expected} features, input has {}",
            data.n_features()
        )));
    }
    Ok(())
}

pub(crate) fn require_both_classes(data: &FeatureMatrix) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    if !data.has_both_classes() {
        return Err(Error::SingleClass(data.labels()[0]));
    }
    Ok(())
}

/// Name-keyed set of base learners.
#[derive(Clone, Default)]
pub struct LearnerRegistry {
    learners: BTreeMap<&'static str, Arc<dyn BaseLearner>>,
}

impl LearnerRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding `logistic`, `svm`, `forest` and `knn`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(LogisticLearner));
        reg.register(Arc::new(SvmLearner));
        reg.register(Arc::new(ForestLearner));
        reg.register(Arc::new(KnnLearner));
        reg
    }

    /// Adds a learner, replacing any previous one with the same name.
    pub fn register(&mut self, learner: Arc<dyn BaseLearner>) {
        self.learners.insert(learner.name(), learner);
    }

    pub fn get(&self, name: &str) -> Result<&dyn BaseLearner> {
        self.learners
            .get(name)
            .map(|l| l.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "base classifier",
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.learners.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let reg = LearnerRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["forest", "knn", "logistic", "svm"]);
        assert!(matches!(
            reg.get("gbdt"),
            Err(Error::UnknownStrategy { .. })
        ));
    }
}
