//! Datasets, base-classifier predictions and the id sets derived from them.
//!
//! Every sample carries a stable integer id assigned at load time. Subsets
//! always reference ids rather than row positions, so splits and filters can
//! be composed freely.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature matrix with binary labels and stable sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_features: usize,
    values: Vec<f64>,
    labels: Vec<u8>,
    ids: Vec<usize>,
}

impl FeatureMatrix {
    /// Builds a matrix whose ids are `0..n_samples`.
    pub fn new(n_features: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(n_features, values, labels, ids)
    }

    pub fn with_ids(
        n_features: usize,
        values: Vec<f64>,
        labels: Vec<u8>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if values.len() != labels.len() * n_features {
            return Err(Error::Shape(format!(
                "{} values for {} samples x {} features",
                values.len(),
                labels.len(),
                n_features
            )));
        }
        if ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} samples",
                ids.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not binary")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value in sample row {}",
                pos / n_features.max(1)
            )));
        }
        let unique: BTreeSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::InvalidInput("sample ids are not unique".into()));
        }
        Ok(Self {
            n_features,
            values,
            labels,
            ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(n_features, rows.concat(), labels)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_samples()).map(move |i| self.row(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count_label(0) > 0 && self.count_label(1) > 0
    }

    /// Row positions keyed by id.
    pub fn id_index(&self) -> HashMap<usize, usize> {
        self.ids.iter().enumerate().map(|(pos, &id)| (id, pos)).collect()
    }

    /// Subset containing the given ids, in the order given.
    pub fn select_ids(&self, ids: &[usize]) -> Result<Self> {
        let index = self.id_index();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("unknown sample id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_positions(&positions))
    }

    /// Subset at the given row positions; ids are carried over.
    pub fn select_positions(&self, positions: &[usize]) -> Self {
        let mut values = Vec::with_capacity(positions.len() * self.n_features);
        for &p in positions {
            values.extend_from_slice(self.row(p));
        }
        Self {
            n_features: self.n_features,
            values,
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        }
    }

    /// Keeps only the listed feature columns, in the listed order.
    pub fn select_features(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.n_features) {
            return Err(Error::Shape(format!(
                "feature {c} out of range for width {}",
                self.n_features
            )));
        }
        let mut values = Vec::with_capacity(self.n_samples() * columns.len());
        for row in self.rows() {
            values.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(Self {
            n_features: columns.len(),
            values,
            labels: self.labels.clone(),
            ids: self.ids.clone(),
        })
    }

    /// Replaces the labels, keeping features and ids.
    pub fn relabel(&self, labels: Vec<u8>) -> Result<Self> {
        Self::with_ids(self.n_features, self.values.clone(), labels, self.ids.clone())
    }

    /// Concatenates two matrices of equal width.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n_features != other.n_features && !self.is_empty() && !other.is_empty() {
            return Err(Error::Shape(format!(
                "cannot concatenate widths {} and {}",
                self.n_features, other.n_features
            )));
        }
        let width = if self.is_empty() { other.n_features } else { self.n_features };
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Self::with_ids(width, values, labels, ids)
    }
}

/// Confusion cell of a single binary prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Confusion {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl Confusion {
    pub fn of(prediction: u8, label: u8) -> Self {
        match (prediction, label) {
            (1, 1) => Confusion::Tp,
            (1, _) => Confusion::Fp,
            (_, 0) => Confusion::Tn,
            _ => Confusion::Fn,
        }
    }

    pub fn is_error(self) -> bool {
        matches!(self, Confusion::Fp | Confusion::Fn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Confusion::Tp => "TP",
            Confusion::Fp => "FP",
            Confusion::Tn => "TN",
            Confusion::Fn => "FN",
        }
    }
}

/// Binary prediction rule shared by every base classifier: 0.5 is positive.
pub fn predict_label(probability: f64) -> u8 {
    u8::from(probability >= 0.5)
}

/// Positive-class probabilities of a base classifier over a set of samples,
/// with the derived binary predictions and confusion tags.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub ids: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
    pub confusion: Vec<Confusion>,
}

impl PredictionReport {
    pub fn new(ids: Vec<usize>, probabilities: Vec<f64>, labels: &[u8]) -> Result<Self> {
        if ids.len() != probabilities.len() || labels.len() != probabilities.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} probabilities, {} labels",
                ids.len(),
                probabilities.len(),
                labels.len()
            )));
        }
        if let Some(p) = probabilities
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let predictions: Vec<u8> = probabilities.iter().map(|&p| predict_label(p)).collect();
        let confusion = predictions
            .iter()
            .zip(labels)
            .map(|(&pred, &label)| Confusion::of(pred, label))
            .collect();
        Ok(Self {
            ids,
            probabilities,
            predictions,
            confusion,
        })
    }

    /// Report for a dataset, taking ids and labels from it.
    pub fn for_data(data: &FeatureMatrix, probabilities: Vec<f64>) -> Result<Self> {
        Self::new(data.ids().to_vec(), probabilities, data.labels())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Restriction of the report to the listed ids, in that order.
    pub fn select_ids(&self, ids: &[usize]) -> Result<Self> {
        let index: HashMap<usize, usize> =
            self.ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
        let mut out = Self {
            ids: Vec::with_capacity(ids.len()),
            probabilities: Vec::with_capacity(ids.len()),
            predictions: Vec::with_capacity(ids.len()),
            confusion: Vec::with_capacity(ids.len()),
        };
        for id in ids {
            let &p = index
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("id {id} not in report")))?;
            out.ids.push(self.ids[p]);
            out.probabilities.push(self.probabilities[p]);
            out.predictions.push(self.predictions[p]);
            out.confusion.push(self.confusion[p]);
        }
        Ok(out)
    }
}

/// Calibrated probability thresholds. Samples with `p < th_n` or `p > th_p`
/// are easy; everything in `[th_n, th_p]` is difficult.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub th_n: f64,
    pub th_p: f64,
}

impl ThresholdPair {
    pub fn new(th_n: f64, th_p: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&th_n) || !(0.5..=1.0).contains(&th_p) {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy 0 <= th_n <= 0.5 <= th_p <= 1, got ({th_n}, {th_p})"
            )));
        }
        Ok(Self { th_n, th_p })
    }

    pub fn is_easy(&self, p: f64) -> bool {
        p < self.th_n || p > self.th_p
    }
}

/// Disjoint easy/difficult id sets covering a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub easy_ids: Vec<usize>,
    pub difficult_ids: Vec<usize>,
}

/// TP/FP/TN/FN id sets of a prediction report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionPartition {
    pub tp_ids: BTreeSet<usize>,
    pub fp_ids: BTreeSet<usize>,
    pub tn_ids: BTreeSet<usize>,
    pub fn_ids: BTreeSet<usize>,
}

impl ConfusionPartition {
    pub fn len(&self) -> usize {
        self.tp_ids.len() + self.fp_ids.len() + self.tn_ids.len() + self.fn_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, cell: Confusion) -> &BTreeSet<usize> {
        match cell {
            Confusion::Tp => &self.tp_ids,
            Confusion::Fp => &self.fp_ids,
            Confusion::Tn => &self.tn_ids,
            Confusion::Fn => &self.fn_ids,
        }
    }
}

/// Splits the report's ids into the four confusion cells against `labels`.
pub fn confusion_partition(report: &PredictionReport, labels: &[u8]) -> Result<ConfusionPartition> {
    if report.len() != labels.len() {
        return Err(Error::Shape(format!(
            "report covers {} samples but {} labels given",
            report.len(),
            labels.len()
        )));
    }
    let mut out = ConfusionPartition::default();
    for ((&id, &pred), &label) in report.ids.iter().zip(&report.predictions).zip(labels) {
        let set = match Confusion::of(pred, label) {
            Confusion::Tp => &mut out.tp_ids,
            Confusion::Fp => &mut out.fp_ids,
            Confusion::Tn => &mut out.tn_ids,
            Confusion::Fn => &mut out.fn_ids,
        };
        set.insert(id);
    }
    Ok(out)
}
