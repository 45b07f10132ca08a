//! Brute-force Euclidean nearest-neighbour classifier.

use serde::{Deserialize, Serialize};

use super::{check_width, BaseClassifier, BaseConfig, BaseLearner, ScoreKind};
use crate::data::{FeatureMatrix, PredictionReport};
use crate::error::{Error, Result};
use crate::store::{BlockRef, ParamReader, ParamWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestNeighborModel {
    pub train: FeatureMatrix,
    pub k: usize,
}

impl NearestNeighborModel {
    pub fn new(train: FeatureMatrix, k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("nearest-neighbour reference set".into()));
        }
        if k == 0 || k > train.n_samples() {
            return Err(Error::Config(format!(
                "k = {k} must be in 1..={}",
                train.n_samples()
            )));
        }
        Ok(Self { train, k })
    }

    /// Fraction of positive labels among the k nearest training samples.
    /// Distance ties are broken by the lower training id.
    pub fn predict_proba(&self, queries: &FeatureMatrix) -> Result<Vec<f64>> {
        check_width(self.train.n_features(), queries)?;
        let ids = self.train.ids();
        let labels = self.train.labels();
        let mut scratch: Vec<(f64, usize, u8)> = Vec::with_capacity(self.train.n_samples());
        Ok(queries
            .rows()
            .map(|q| {
                scratch.clear();
                scratch.extend(self.train.rows().enumerate().map(|(i, r)| {
                    let d2: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, ids[i], labels[i])
                }));
                let key = |a: &(f64, usize, u8), b: &(f64, usize, u8)| {
                    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                };
                if self.k == 1 {
                    let best = scratch.iter().min_by(|a, b| key(a, b)).expect("non-empty");
                    return f64::from(best.2);
                }
                scratch.select_nth_unstable_by(self.k - 1, key);
                let pos = scratch[..self.k].iter().filter(|n| n.2 == 1).count();
                pos as f64 / self.k as f64
            })
            .collect())
    }
}

/// Predictions for labelled queries; with k = 1 every probability is 0 or 1.
pub fn knn_predict(model: &NearestNeighborModel, queries: &FeatureMatrix) -> Result<PredictionReport> {
    PredictionReport::for_data(queries, model.predict_proba(queries)?)
}

#[derive(Serialize, Deserialize)]
struct KnnManifest {
    k: usize,
    n_samples: usize,
    n_features: usize,
    values: BlockRef,
    labels: BlockRef,
    ids: BlockRef,
}

impl BaseClassifier for NearestNeighborModel {
    fn kind(&self) -> &'static str {
        "knn"
    }

    fn n_features(&self) -> usize {
        self.train.n_features()
    }

    fn score_kind(&self) -> ScoreKind {
        if self.k == 1 {
            ScoreKind::Hard
        } else {
            ScoreKind::Probability
        }
    }

    fn scores(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_proba(data)
    }

    fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        let t = &self.train;
        let labels: Vec<f64> = t.labels().iter().map(|&l| f64::from(l)).collect();
        let ids: Vec<f64> = t.ids().iter().map(|&i| i as f64).collect();
        Ok(serde_json::to_value(KnnManifest {
            k: self.k,
            n_samples: t.n_samples(),
            n_features: t.n_features(),
            values: params.put(t.values(), &[t.n_samples(), t.n_features()]),
            labels: params.put_vec(&labels),
            ids: params.put_vec(&ids),
        })?)
    }
}

pub struct KnnLearner;

impl BaseLearner for KnnLearner {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(&self, data: &FeatureMatrix, cfg: &BaseConfig, _seed: u64) -> Result<Box<dyn BaseClassifier>> {
        Ok(Box::new(NearestNeighborModel::new(data.clone(), cfg.knn.k)?))
    }

    fn load(&self, manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Box<dyn BaseClassifier>> {
        let m: KnnManifest = serde_json::from_value(manifest.clone())?;
        let values = params.get_shaped(&m.values, &[m.n_samples, m.n_features])?;
        let labels = params.get_shaped(&m.labels, &[m.n_samples])?;
        let ids = params.get_shaped(&m.ids, &[m.n_samples])?;
        let train = FeatureMatrix::with_ids(
            m.n_features,
            values.to_vec(),
            labels.iter().map(|&l| l as u8).collect(),
            ids.iter().map(|&i| i as usize).collect(),
        )
        .map_err(|e| Error::Corrupt(format!("knn reference set: {e}")))?;
        Ok(Box::new(NearestNeighborModel::new(train, m.k)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> FeatureMatrix {
        FeatureMatrix::from_rows(
            &[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![5.0, 5.0]],
            vec![1, 0, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_takes_its_label() {
        let model = NearestNeighborModel::new(reference(), 1).unwrap();
        let q = FeatureMatrix::from_rows(&[vec![5.0, 5.0], vec![2.0, 0.0]], vec![1, 1]).unwrap();
        let report = knn_predict(&model, &q).unwrap();
        assert_eq!(report.probabilities, vec![1.0, 0.0]);
    }

    #[test]
    fn equidistant_neighbours_pick_lowest_id() {
        let model = NearestNeighborModel::new(reference(), 1).unwrap();
        // (1, 1) is sqrt(2) from ids 0, 1 and 2; id 0 is positive
        let q = FeatureMatrix::from_rows(&[vec![1.0, 1.0]], vec![0]).unwrap();
        assert_eq!(model.predict_proba(&q).unwrap(), vec![1.0]);
        // (2, 2) is 2 from ids 1 and 2, both negative, farther from 0
        let q = FeatureMatrix::from_rows(&[vec![2.0, 2.0]], vec![0]).unwrap();
        assert_eq!(model.predict_proba(&q).unwrap(), vec![0.0]);
    }

    #[test]
    fn training_set_has_no_errors() {
        let data = reference();
        let model = NearestNeighborModel::new(data.clone(), 1).unwrap();
        let report = knn_predict(&model, &data).unwrap();
        assert!(report.confusion.iter().all(|c| !c.is_error()));
    }

    #[test]
    fn k_bounds_and_width_are_checked() {
        assert!(NearestNeighborModel::new(reference(), 0).is_err());
        assert!(NearestNeighborModel::new(reference(), 5).is_err());
        let empty = FeatureMatrix::new(2, vec![], vec![]).unwrap();
        assert!(NearestNeighborModel::new(empty, 1).is_err());
        let model = NearestNeighborModel::new(reference(), 1).unwrap();
        let q = FeatureMatrix::from_rows(&[vec![1.0]], vec![0]).unwrap();
        assert!(model.predict_proba(&q).is_err());
    }

    #[test]
    fn larger_k_votes() {
        let model = NearestNeighborModel::new(reference(), 3).unwrap();
        let q = FeatureMatrix::from_rows(&[vec![0.1, 0.1]], vec![0]).unwrap();
        assert_eq!(model.predict_proba(&q).unwrap(), vec![1.0 / 3.0]);
    }
}
