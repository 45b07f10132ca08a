//! Linear base classifiers trained by stochastic (sub)gradient descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_width, require_both_classes, BaseClassifier, BaseConfig, BaseLearner, ScoreKind};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::store::{BlockRef, ParamReader, ParamWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty (the SVM regularization strength).
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub kind: LinearKind,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn decision_function(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        check_width(self.weights.len(), data)?;
        Ok(data.rows().map(|r| self.decision(r)).collect())
    }

    /// Positive-class probability; only meaningful for the logistic kind.
    pub fn predict_proba(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .decision_function(data)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn validate(cfg: &LinearConfig) -> Result<()> {
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0) {
        return Err(Error::Config(format!(
            "linear model needs learning_rate > 0 and l2 >= 0, got {} and {}",
            cfg.learning_rate, cfg.l2
        )));
    }
    Ok(())
}

fn sgd(data: &FeatureMatrix, cfg: &LinearConfig, seed: u64, kind: LinearKind) -> Result<LinearModel> {
    require_both_classes(data)?;
    validate(cfg)?;
    let mut model = LinearModel {
        weights: vec![0.0; data.n_features()],
        bias: 0.0,
        kind,
    };
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * cfg.l2 * step as f64);
            let x = data.row(i);
            let z = model.decision(x);
            // d(loss)/dz for the sample
            let dz = match kind {
                LinearKind::Logistic => sigmoid(z) - f64::from(data.labels()[i]),
                LinearKind::Svm => {
                    let y = 2.0 * f64::from(data.labels()[i]) - 1.0;
                    if y * z < 1.0 {
                        -y
                    } else {
                        0.0
                    }
                }
            };
            let shrink = 1.0 - eta * cfg.l2;
            for (w, v) in model.weights.iter_mut().zip(x) {
                *w = *w * shrink - eta * dz * v;
            }
            model.bias -= eta * dz;
        }
    }
    Ok(model)
}

pub fn train_logistic(data: &FeatureMatrix, cfg: &LinearConfig, seed: u64) -> Result<LinearModel> {
    sgd(data, cfg, seed, LinearKind::Logistic)
}

/// Hinge loss with L2 regularization, minimized by per-sample subgradient steps.
pub fn train_linear_svm(data: &FeatureMatrix, cfg: &LinearConfig, seed: u64) -> Result<LinearModel> {
    sgd(data, cfg, seed, LinearKind::Svm)
}

#[derive(Serialize, Deserialize)]
struct LinearManifest {
    n_features: usize,
    bias: f64,
    weights: BlockRef,
}

impl BaseClassifier for LinearModel {
    fn kind(&self) -> &'static str {
        match self.kind {
            LinearKind::Logistic => "logistic",
            LinearKind::Svm => "svm",
        }
    }

    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score_kind(&self) -> ScoreKind {
        match self.kind {
            LinearKind::Logistic => ScoreKind::Probability,
            LinearKind::Svm => ScoreKind::Decision,
        }
    }

    fn scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        match self.kind {
            LinearKind::Logistic => self.predict_proba(data),
            LinearKind::Svm => self.decision_function(data),
        }
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(LinearManifest {
            n_features: self.weights.len(),
            bias: self.bias,
            weights: params.put_vec(&self.weights),
        })?)
    }
}

fn load_linear(
    manifest: &serde_json::Value,
    params: &ParamReader<'_>,
    kind: LinearKind,
) -> Result<Box<dyn BaseClassifier>> {
    let m: LinearManifest = serde_json::from_value(manifest.clone())?;
    Ok(Box::new(LinearModel {
        weights: params.get_shaped(&m.weights, &[m.n_features])?.to_vec(),
        bias: m.bias,
        kind,
    }))
}

pub struct LogisticLearner;

impl BaseLearner for LogisticLearner {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn fit(&self, data: &FeatureMatrix, cfg: &BaseConfig, seed: u64) -> Result<Box<dyn BaseClassifier>> {
        Ok(Box::new(train_logistic(data, &cfg.linear, seed)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn BaseClassifier>> {
        load_linear(manifest, params, LinearKind::Logistic)
    }
}

pub struct SvmLearner;

impl BaseLearner for SvmLearner {
    fn name(&self) -> &'static str {
        "svm"
    }

    fn fit(&self, data: &FeatureMatrix, cfg: &BaseConfig, seed: u64) -> Result<Box<dyn BaseClassifier>> {
        Ok(Box::new(train_linear_svm(data, &cfg.linear, seed)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn BaseClassifier>> {
        load_linear(manifest, params, LinearKind::Svm)
    }
}
