//! Tolerated-error budgets, threshold calibration on validation predictions,
//! and the easy/difficult split.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{confusion_partition, ConfusionPartition, PredictionReport, SplitAssignment, ThresholdPair};
use crate::error::{Error, Result};

/// Percentages of validation FPs (`x`) and FNs (`y`) allowed in the easy set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub x: f64,
    pub y: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { x: 5.0, y: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToleratedCounts {
    pub tolerated_fps: usize,
    pub tolerated_fns: usize,
}

/// `floor(x * fp_v / 100)` and `floor(y * fn_v / 100)`.
pub fn tolerated_counts(x: f64, y: f64, fp_v: usize, fn_v: usize) -> Result<ToleratedCounts> {
    for (name, v) in [("X", x), ("Y", y)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Config(format!("{name} = {v} is outside [0, 100]")));
        }
    }
    let budget = |pct: f64, n: usize| ((pct * n as f64 / 100.0).floor() as usize).min(n);
    Ok(ToleratedCounts {
        tolerated_fps: budget(x, fp_v),
        tolerated_fns: budget(y, fn_v),
    })
}

/// A probability and the id of the sample it belongs to.
type Scored = (f64, usize);

/// Walks one side of the probability scale from its most confident end and
/// returns the probability of the sample at which the error counter first
/// equals `tolerated` (the counter is checked before it is incremented).
/// When the side holds no more than `tolerated` errors the whole side is
/// easy and 0.5 is returned.
fn side_threshold(
    mut side: Vec<Scored>,
    errors: &BTreeSet<usize>,
    tolerated: usize,
    descending: bool,
) -> f64 {
    let total = side.iter().filter(|(_, id)| errors.contains(id)).count();
    if tolerated >= total {
        return 0.5;
    }
    side.sort_by(|a, b| {
        let by_p = if descending { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
        by_p.then(a.1.cmp(&b.1))
    });
    let mut counter = 0;
    for (p, id) in side {
        if counter == tolerated {
            return p;
        }
        if errors.contains(&id) {
            counter += 1;
        }
    }
    0.5
}

/// Threshold selection over validation predictions.
///
/// Samples with `p >= 0.5` are scanned in descending order (ties by id) to
/// place `th_p` after `tolerated_fps` false positives; samples with `p < 0.5`
/// are scanned in ascending order to place `th_n` after `tolerated_fns`
/// false negatives.
pub fn select_thresholds(
    ids: &[usize],
    probs: &[f64],
    fp_ids: &BTreeSet<usize>,
    fn_ids: &BTreeSet<usize>,
    tolerated: ToleratedCounts,
) -> Result<ThresholdPair> {
    if ids.len() != probs.len() {
        return Err(Error::Shape(format!("{} ids for {} probabilities", ids.len(), probs.len())));
    }
    let (pos, neg): (Vec<Scored>, Vec<Scored>) = probs
        .iter()
        .copied()
        .zip(ids.iter().copied())
        .partition(|(p, _)| *p >= 0.5);
    let th_p = side_threshold(pos, fp_ids, tolerated.tolerated_fps, true);
    let th_n = side_threshold(neg, fn_ids, tolerated.tolerated_fns, false);
    ThresholdPair::new(th_n, th_p)
}

/// Everything derived when calibrating thresholds on a validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tolerance: ToleranceConfig,
    pub fp_v: usize,
    pub fn_v: usize,
    pub tolerated: ToleratedCounts,
    pub thresholds: ThresholdPair,
}

pub fn calibrate(report: &PredictionReport, labels: &[u8], tolerance: ToleranceConfig) -> Result<Calibration> {
    let part = confusion_partition(report, labels)?;
    let tolerated = tolerated_counts(tolerance.x, tolerance.y, part.fp_ids.len(), part.fn_ids.len())?;
    let thresholds = select_thresholds(&report.ids, &report.probabilities, &part.fp_ids, &part.fn_ids, tolerated)?;
    Ok(Calibration {
        tolerance,
        fp_v: part.fp_ids.len(),
        fn_v: part.fn_ids.len(),
        tolerated,
        thresholds,
    })
}

/// Easy: `p < th_n` or `p > th_p`. Difficult: `th_n <= p <= th_p`.
pub fn split_dataset(ids: &[usize], probs: &[f64], thresholds: &ThresholdPair) -> SplitAssignment {
    let mut out = SplitAssignment::default();
    for (&id, &p) in ids.iter().zip(probs) {
        if thresholds.is_easy(p) {
            out.easy_ids.push(id);
        } else {
            out.difficult_ids.push(id);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSide {
    /// Accumulated false negatives with `p <= t`.
    Negative,
    /// Accumulated false positives with `p >= t`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub side: CurveSide,
    pub count: usize,
}

/// Thresholds 0.00, 0.01, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| f64::from(i) / 100.0).collect()
}

/// Accumulated FNs below each grid threshold under 0.5 and accumulated FPs
/// above each grid threshold from 0.5 up.
pub fn accumulated_error_curve(
    ids: &[usize],
    probs: &[f64],
    confusion: &ConfusionPartition,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidInput(format!("grid threshold {t} outside [0, 1]")));
    }
    let collect = |set: &BTreeSet<usize>| -> Vec<f64> {
        ids.iter()
            .zip(probs)
            .filter(|(id, _)| set.contains(id))
            .map(|(_, &p)| p)
            .collect()
    };
    let fns = collect(&confusion.fn_ids);
    let fps = collect(&confusion.fp_ids);
    Ok(grid
        .iter()
        .map(|&t| {
            if t < 0.5 {
                CurvePoint {
                    threshold: t,
                    side: CurveSide::Negative,
                    count: fns.iter().filter(|&&p| p <= t).count(),
                }
            } else {
                CurvePoint {
                    threshold: t,
                    side: CurveSide::Positive,
                    count: fps.iter().filter(|&&p| p >= t).count(),
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Confusion;
    use proptest::prelude::*;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    /// Brute force: the threshold is the highest probability among positive
    /// side samples preceded (in the descending, id-tiebroken order) by
    /// exactly `tolerated` errors, counted directly for every sample.
    fn oracle_th_p(probs: &[f64], fps: &BTreeSet<usize>, tolerated: usize) -> f64 {
        let side: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= 0.5).collect();
        if side.iter().filter(|i| fps.contains(i)).count() <= tolerated {
            return 0.5;
        }
        side.iter()
            .filter(|&&s| {
                side.iter()
                    .filter(|&&j| {
                        fps.contains(&j) && (probs[j] > probs[s] || (probs[j] == probs[s] && j < s))
                    })
                    .count()
                    == tolerated
            })
            .map(|&s| probs[s])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn tolerated_count_arithmetic() {
        assert_eq!(tolerated_counts(5.0, 5.0, 140, 0).unwrap().tolerated_fps, 7);
        assert_eq!(tolerated_counts(0.0, 0.0, 999, 3).unwrap().tolerated_fps, 0);
        assert_eq!(tolerated_counts(100.0, 0.0, 33, 0).unwrap().tolerated_fps, 33);
        assert_eq!(tolerated_counts(5.0, 5.0, 0, 19).unwrap().tolerated_fns, 0);
        assert!(tolerated_counts(101.0, 5.0, 1, 1).is_err());
        assert!(tolerated_counts(5.0, -1.0, 1, 1).is_err());
    }

    fn tol(fps: usize, fns: usize) -> ToleratedCounts {
        ToleratedCounts {
            tolerated_fps: fps,
            tolerated_fns: fns,
        }
    }

    #[test]
    fn positive_side_trace() {
        // (0.99 TP) (0.95 FP) (0.90 TP) (0.80 FP)
        let probs = [0.99, 0.95, 0.90, 0.80];
        let fps = set(&[1, 3]);
        let th = select_thresholds(&[0, 1, 2, 3], &probs, &fps, &set(&[]), tol(1, 0)).unwrap();
        assert_eq!(th.th_p, 0.90);
        assert_eq!(oracle_th_p(&probs, &fps, 1), 0.90);
        // exactly one FP lands in the easy set
        let split = split_dataset(&[0, 1, 2, 3], &probs, &th);
        assert_eq!(split.easy_ids, vec![0, 1]);
    }

    #[test]
    fn zero_tolerance_stops_at_first_sample() {
        let probs = [0.99, 0.95, 0.7];
        let fps = set(&[0]);
        let th = select_thresholds(&[0, 1, 2], &probs, &fps, &set(&[]), tol(0, 0)).unwrap();
        assert_eq!(th.th_p, 0.99);
        assert!(split_dataset(&[0, 1, 2], &probs, &th).easy_ids.is_empty());
    }

    #[test]
    fn budget_covering_all_errors_makes_side_easy() {
        let probs = [0.9, 0.8, 0.3, 0.1];
        let th = select_thresholds(&[0, 1, 2, 3], &probs, &set(&[1]), &set(&[2]), tol(1, 1)).unwrap();
        assert_eq!(th, ThresholdPair { th_n: 0.5, th_p: 0.5 });
        // no errors at all: nothing to quarantine even with zero budget
        let th = select_thresholds(&[0, 1, 2, 3], &probs, &set(&[]), &set(&[]), tol(0, 0)).unwrap();
        assert_eq!(th, ThresholdPair { th_n: 0.5, th_p: 0.5 });
    }

    #[test]
    fn negative_side_walks_upwards() {
        // ascending: 0.05 TN, 0.10 FN, 0.20 TN, 0.30 FN, 0.45 FN
        let probs = [0.30, 0.05, 0.45, 0.10, 0.20];
        let fns = set(&[0, 2, 3]);
        let th = select_thresholds(&[0, 1, 2, 3, 4], &probs, &set(&[]), &fns, tol(0, 1)).unwrap();
        assert_eq!(th.th_n, 0.20);
    }

    #[test]
    fn split_follows_set_definition() {
        let th = ThresholdPair::new(0.2, 0.9).unwrap();
        let s = split_dataset(&[0, 1, 2], &[0.1, 0.5, 0.95], &th);
        assert_eq!(s.easy_ids, vec![0, 2]);
        assert_eq!(s.difficult_ids, vec![1]);
        // the thresholds themselves are difficult
        let s = split_dataset(&[0, 1], &[0.9, 0.2], &th);
        assert_eq!(s.difficult_ids, vec![0, 1]);
        let half = ThresholdPair::new(0.5, 0.5).unwrap();
        let s = split_dataset(&[0, 1, 2], &[0.1, 0.7, 0.5], &half);
        assert_eq!(s.difficult_ids, vec![2]);
    }

    #[test]
    fn curve_counts() {
        let part = ConfusionPartition {
            fp_ids: set(&[0, 1]),
            fn_ids: set(&[2]),
            ..Default::default()
        };
        let pts = accumulated_error_curve(&[0, 1, 2], &[0.6, 0.8, 0.3], &part, &[0.0, 0.3, 0.5, 0.7]).unwrap();
        let counts: Vec<usize> = pts.iter().map(|p| p.count).collect();
        assert_eq!(counts, vec![0, 1, 2, 1]);
        assert_eq!(pts[2].side, CurveSide::Positive);
        assert!(accumulated_error_curve(&[], &[], &part, &[1.5]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, f64, f64)> {
        (1usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec(prop_oneof![0.0f64..=1.0, (0u32..=20).prop_map(|k| f64::from(k) / 20.0)], n),
                proptest::collection::vec(0u8..2, n),
                0.0f64..=100.0,
                0.0f64..=100.0,
            )
        })
    }

    proptest! {
        #[test]
        fn calibration_respects_budgets((probs, labels, x, y) in instance()) {
            let ids: Vec<usize> = (0..probs.len()).collect();
            let report = PredictionReport::new(ids.clone(), probs.clone(), &labels).unwrap();
            let cal = calibrate(&report, &labels, ToleranceConfig { x, y }).unwrap();
            let part = confusion_partition(&report, &labels).unwrap();
            prop_assert_eq!(cal.thresholds.th_p, oracle_th_p(&probs, &part.fp_ids, cal.tolerated.tolerated_fps));
            let split = split_dataset(&ids, &probs, &cal.thresholds);
            let easy: BTreeSet<usize> = split.easy_ids.iter().copied().collect();
            prop_assert_eq!(split.easy_ids.len() + split.difficult_ids.len(), ids.len());
            let easy_fp = report.confusion.iter().enumerate()
                .filter(|(i, c)| **c == Confusion::Fp && easy.contains(i)).count();
            let easy_fn = report.confusion.iter().enumerate()
                .filter(|(i, c)| **c == Confusion::Fn && easy.contains(i)).count();
            prop_assert!(easy_fp <= cal.tolerated.tolerated_fps);
            prop_assert!(easy_fn <= cal.tolerated.tolerated_fns);
        }

        #[test]
        fn curves_are_monotone(probs in proptest::collection::vec(0.0f64..=1.0, 0..80), labels_seed in any::<u64>()) {
            let labels: Vec<u8> = (0..probs.len()).map(|i| ((labels_seed >> (i % 64)) & 1) as u8).collect();
            let ids: Vec<usize> = (0..probs.len()).collect();
            let report = PredictionReport::new(ids.clone(), probs.clone(), &labels).unwrap();
            let part = confusion_partition(&report, &labels).unwrap();
            let pts = accumulated_error_curve(&ids, &probs, &part, &default_grid()).unwrap();
            for w in pts.windows(2) {
                if w[0].side == w[1].side {
                    match w[0].side {
                        CurveSide::Negative => prop_assert!(w[0].count <= w[1].count),
                        CurveSide::Positive => prop_assert!(w[0].count >= w[1].count),
                    }
                }
            }
        }
    }
}
