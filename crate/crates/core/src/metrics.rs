//! Detection metrics: accuracy, positive-class F1, error counts, and the
//! error-difference summaries used to compare a retrained classifier with
//! its base.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Whole,
    Easy,
    Difficult,
    Combined,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Whole => "whole",
            Scope::Easy => "easy",
            Scope::Difficult => "difficult",
            Scope::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scope: Scope,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvaluationReport {
    pub fn total_errors(&self) -> usize {
        self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn from_counts(scope: Scope, tp: usize, fp: usize, tn: usize, fn_: usize) -> EvaluationReport {
    let n = tp + fp + tn + fn_;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EvaluationReport {
        scope,
        n,
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, n),
        precision,
        recall,
        f1,
    }
}

pub fn evaluate_scoped(preds: &[u8], labels: &[u8], scope: Scope) -> Result<EvaluationReport> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Ok(from_counts(scope, tp, fp, tn, fn_))
}

/// Accuracy, positive-class F1 (0 when undefined) and FP/FN counts.
pub fn evaluate(preds: &[u8], labels: &[u8]) -> Result<EvaluationReport> {
    evaluate_scoped(preds, labels, Scope::Whole)
}

/// `aux_errors - base_errors`; negative means the auxiliary made fewer errors.
pub fn delta_errors(base: &EvaluationReport, aux: &EvaluationReport) -> Result<i64> {
    if base.n != aux.n {
        return Err(Error::Shape(format!(
            "reports cover {} and {} samples",
            base.n, aux.n
        )));
    }
    Ok(aux.total_errors() as i64 - base.total_errors() as i64)
}

/// `-delta / base_errors * 100`, or `None` when the base made no errors.
pub fn errors_reduction(delta: i64, base_errors: usize) -> Option<f64> {
    (base_errors > 0).then(|| (-delta) as f64 / base_errors as f64 * 100.0)
}

/// Rounds a percentage to two decimals for reporting.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub combined: EvaluationReport,
    pub easy: Option<EvaluationReport>,
    pub difficult: Option<EvaluationReport>,
}

/// Scores the union of easy and difficult predictions. The two id lists must
/// be disjoint; either side may be empty but not both.
pub fn combined_report(
    easy_ids: &[usize],
    easy_preds: &[u8],
    easy_labels: &[u8],
    difficult_ids: &[usize],
    difficult_preds: &[u8],
    difficult_labels: &[u8],
) -> Result<CombinedReport> {
    if easy_ids.len() != easy_preds.len() || difficult_ids.len() != difficult_preds.len() {
        return Err(Error::Shape("ids and predictions differ in length".into()));
    }
    let mut seen = BTreeSet::new();
    for id in easy_ids.iter().chain(difficult_ids) {
        if !seen.insert(id) {
            return Err(Error::InvalidInput(format!(
                "sample id {id} appears in more than one subset"
            )));
        }
    }
    let easy = (!easy_preds.is_empty())
        .then(|| evaluate_scoped(easy_preds, easy_labels, Scope::Easy))
        .transpose()?;
    let difficult = (!difficult_preds.is_empty())
        .then(|| evaluate_scoped(difficult_preds, difficult_labels, Scope::Difficult))
        .transpose()?;
    let preds: Vec<u8> = easy_preds.iter().chain(difficult_preds).copied().collect();
    let labels: Vec<u8> = easy_labels.iter().chain(difficult_labels).copied().collect();
    Ok(CombinedReport {
        combined: evaluate_scoped(&preds, &labels, Scope::Combined)?,
        easy,
        difficult,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictor() {
        let r = evaluate(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((r.accuracy, r.f1, r.total_errors()), (1.0, 1.0, 0));
    }

    #[test]
    fn no_positives_gives_zero_f1() {
        let r = evaluate(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn hand_counted_confusion() {
        // TP=1 FN=1 FP=1 TN=1
        let r = evaluate(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.5, 0.5, 0.5, 0.5));
        assert_eq!((r.fp, r.fn_), (1, 1));
    }

    #[test]
    fn empty_or_mismatched_input_is_rejected() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[1], &[1, 0]).is_err());
    }

    fn with_errors(errors: usize, n: usize) -> EvaluationReport {
        let preds = vec![1u8; n];
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i >= errors)).collect();
        evaluate(&preds, &labels).unwrap()
    }

    #[test]
    fn delta_and_reduction() {
        let base = with_errors(540, 600);
        let aux = with_errors(471, 600);
        let d = delta_errors(&base, &aux).unwrap();
        assert_eq!(d, -69);
        assert_eq!(round2(errors_reduction(d, 540).unwrap()), 12.78);
        assert_eq!(delta_errors(&with_errors(100, 200), &with_errors(130, 200)).unwrap(), 30);
        assert!(errors_reduction(0, 444).unwrap().is_sign_positive());
        assert_eq!(errors_reduction(-3, 0), None);
        assert!(delta_errors(&with_errors(1, 5), &with_errors(1, 6)).is_err());
    }

    #[test]
    fn combined_matches_direct_evaluation() {
        let labels = [1, 0, 1, 1, 0, 0];
        let preds = [1, 1, 0, 1, 0, 1];
        let direct = evaluate(&preds, &labels).unwrap();
        let c = combined_report(&[0, 1, 2], &preds[..3], &labels[..3], &[3, 4, 5], &preds[3..], &labels[3..]).unwrap();
        assert_eq!((c.combined.fp, c.combined.fn_, c.combined.accuracy, c.combined.f1), (direct.fp, direct.fn_, direct.accuracy, direct.f1));
        let (e, d) = (c.easy.unwrap(), c.difficult.unwrap());
        assert_eq!(c.combined.fp, e.fp + d.fp);
        assert_eq!(c.combined.fn_, e.fn_ + d.fn_);
    }

    #[test]
    fn overlapping_ids_are_rejected() {
        assert!(combined_report(&[0, 1], &[1, 1], &[1, 1], &[1], &[0], &[0]).is_err());
    }

    #[test]
    fn perfect_halves_compose() {
        let c = combined_report(&[0], &[1], &[1], &[1], &[0], &[0]).unwrap();
        assert_eq!(c.combined.accuracy, 1.0);
    }

    proptest! {
        #[test]
        fn report_invariants(cells in proptest::collection::vec((0u8..2, 0u8..2), 1..100)) {
            let preds: Vec<u8> = cells.iter().map(|c| c.0).collect();
            let labels: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let r = evaluate(&preds, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.f1));
            prop_assert_eq!(r.accuracy, (r.n - r.total_errors()) as f64 / r.n as f64);
            let mut rp = preds.clone();
            let mut rl = labels.clone();
            rp.reverse();
            rl.reverse();
            prop_assert_eq!(evaluate(&rp, &rl).unwrap(), r.clone());
            let other = evaluate(&labels, &labels).unwrap();
            prop_assert_eq!(delta_errors(&r, &other).unwrap(), -delta_errors(&other, &r).unwrap());
        }
    }
}
