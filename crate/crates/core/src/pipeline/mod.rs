//! The two-stage predictor: base classifier, easy/difficult gate and the
//! retrained head for difficult samples.

mod container;
mod retrain;

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    error_proxy_probabilities, BaseClassifier, BaseConfig, ForestModel, LearnerRegistry, ProbabilityAdapter,
    ScoreKind, ScoreRange,
};
use crate::data::{FeatureMatrix, PredictionReport, SplitAssignment, ThresholdPair};
use crate::error::{Error, Result};
use crate::thresholding::{calibrate, Calibration, ToleranceConfig};

pub use container::{CONTAINER_MAGIC, CONTAINER_VERSION};
pub use retrain::{
    ClassicHead, ClassicRetrainer, DifficultHead, GuidedHead, GuidedRetrainer, RetrainConfig, Retrainer,
    RetrainerRegistry, CONFUSION_PAIRS,
};

/// A fitted base classifier and the transform from its scores to
/// positive-class probabilities.
#[derive(Debug)]
pub struct BaseStage {
    pub model: Box<dyn BaseClassifier>,
    pub adapter: ProbabilityAdapter,
}

impl BaseStage {
    /// Fits the configured learner on `train`. Decision-valued models get a
    /// score range spanning their scores on `train` and every set in
    /// `range_sets`.
    pub fn fit(
        registry: &LearnerRegistry,
        cfg: &BaseConfig,
        train: &FeatureMatrix,
        range_sets: &[&FeatureMatrix],
        seed: u64,
    ) -> Result<Self> {
        let model = registry.get(&cfg.kind)?.fit(train, cfg, seed)?;
        let adapter = match model.score_kind() {
            ScoreKind::Probability | ScoreKind::Hard => ProbabilityAdapter::Identity,
            ScoreKind::Decision => {
                let mut scores = model.scores(train)?;
                for set in range_sets {
                    scores.extend(model.scores(set)?);
                }
                ProbabilityAdapter::MinMax(ScoreRange::from_scores(&scores)?)
            }
        };
        Ok(Self { model, adapter })
    }

    pub fn probabilities(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        self.adapter.apply(&self.model.scores(data)?)
    }

    pub fn report(&self, data: &FeatureMatrix) -> Result<PredictionReport> {
        PredictionReport::for_data(data, self.probabilities(data)?)
    }
}

/// Decides which samples the base classifier keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Thresholds(ThresholdPair),
    /// Easy iff the forest's error probability is exactly zero.
    ErrorProxy(ForestModel),
}

/// Result of fitting a gate on validation data.
#[derive(Debug, Clone)]
pub struct GateFit {
    pub gate: Gate,
    /// Threshold calibration details; absent for the error proxy.
    pub calibration: Option<Calibration>,
}

impl Gate {
    /// Calibrates thresholds on the validation report, or fits an error
    /// proxy when the base only produces hard labels.
    pub fn fit(
        base: &BaseStage,
        val: &FeatureMatrix,
        val_report: &PredictionReport,
        tolerance: ToleranceConfig,
        cfg: &BaseConfig,
        seed: u64,
    ) -> Result<GateFit> {
        match base.model.score_kind() {
            ScoreKind::Hard => {
                let (forest, _) = error_proxy_probabilities(val, val_report, &cfg.error_proxy, seed)?;
                Ok(GateFit {
                    gate: Gate::ErrorProxy(forest),
                    calibration: None,
                })
            }
            _ => {
                let calibration = calibrate(val_report, val.labels(), tolerance)?;
                Ok(GateFit {
                    gate: Gate::Thresholds(calibration.thresholds),
                    calibration: Some(calibration),
                })
            }
        }
    }

    pub fn easy_mask(&self, data: &FeatureMatrix, probs: &[f64]) -> Result<Vec<bool>> {
        if probs.len() != data.n_samples() {
            return Err(Error::Shape("probability count differs from sample count".into()));
        }
        match self {
            Gate::Thresholds(t) => Ok(probs.iter().map(|&p| t.is_easy(p)).collect()),
            Gate::ErrorProxy(forest) => Ok(forest.predict_proba(data)?.iter().map(|&e| e == 0.0).collect()),
        }
    }

    pub fn split(&self, data: &FeatureMatrix, probs: &[f64]) -> Result<SplitAssignment> {
        let mut out = SplitAssignment::default();
        for (&id, easy) in data.ids().iter().zip(self.easy_mask(data, probs)?) {
            if easy {
                out.easy_ids.push(id);
            } else {
                out.difficult_ids.push(id);
            }
        }
        Ok(out)
    }

    pub fn thresholds(&self) -> Option<ThresholdPair> {
        match self {
            Gate::Thresholds(t) => Some(*t),
            Gate::ErrorProxy(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Base,
    Auxiliary,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Base => "base",
            Route::Auxiliary => "auxiliary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ids: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
    pub routes: Vec<Route>,
}

impl Prediction {
    pub fn count(&self, route: Route) -> usize {
        self.routes.iter().filter(|&&r| r == route).count()
    }
}

#[derive(Debug)]
pub struct Pipeline {
    /// Columns of the raw input kept before anything else sees it.
    pub features: Option<Vec<usize>>,
    pub base: BaseStage,
    pub gate: Gate,
    /// Absent when there was nothing to retrain on; difficult samples then
    /// keep the base prediction.
    pub head: Option<Box<dyn DifficultHead>>,
    pub metadata: serde_json::Value,
}

impl Pipeline {
    fn prepare(&self, data: &FeatureMatrix) -> Result<FeatureMatrix> {
        let reduced = match &self.features {
            Some(cols) => data.select_features(cols)?,
            None => data.clone(),
        };
        if reduced.n_features() != self.base.model.n_features() {
            return Err(Error::Shape(format!(
                "pipeline expects {} features, input has {}",
                self.base.model.n_features(),
                reduced.n_features()
            )));
        }
        Ok(reduced)
    }

    /// Routes every sample to the base prediction or the auxiliary head.
    pub fn predict(&self, data: &FeatureMatrix) -> Result<Prediction> {
        let data = self.prepare(data)?;
        let probabilities = self.base.probabilities(&data)?;
        let easy = self.gate.easy_mask(&data, &probabilities)?;
        let mut labels: Vec<u8> = probabilities.iter().map(|&p| crate::data::predict_label(p)).collect();
        let mut routes = vec![Route::Base; labels.len()];
        if let Some(head) = &self.head {
            let difficult: Vec<usize> = (0..labels.len()).filter(|&i| !easy[i]).collect();
            if !difficult.is_empty() {
                let aux = head.predict(&data.select_positions(&difficult))?;
                for (&pos, label) in difficult.iter().zip(aux) {
                    labels[pos] = label;
                    routes[pos] = Route::Auxiliary;
                }
            }
        }
        Ok(Prediction {
            ids: data.ids().to_vec(),
            probabilities,
            labels,
            routes,
        })
    }
}
