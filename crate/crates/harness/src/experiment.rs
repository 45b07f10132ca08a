//! End-to-end experiment: base training, calibration, easy/difficult split,
//! retraining, evaluation and the report bundle.

use std::path::{Path, PathBuf};

use hardsplit_core::classifiers::LearnerRegistry;
use hardsplit_core::metrics::{delta_errors, errors_reduction, evaluate, round2, EvaluationReport};
use hardsplit_core::pipeline::{BaseStage, DifficultHead, Gate, Pipeline, RetrainerRegistry, Route};
use hardsplit_core::rng::derive_seed;
use hardsplit_core::thresholding::{accumulated_error_curve, default_grid, Calibration, CurvePoint};
use hardsplit_core::{confusion_partition, Error, FeatureMatrix, PredictionReport, SplitAssignment, ThresholdPair};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{AtStage, Stage, StageError};
use crate::io::{load_dense_csv, load_sparse};
use crate::select::feature_select_topk;
use crate::split::{split_80_10_10, DataSplits};
use crate::synth::generate_synthetic;

pub type StageResult<T> = Result<T, StageError>;

pub const SET_NAMES: [&str; 3] = ["train", "validation", "test"];

pub fn load_data(source: &DataSource) -> StageResult<FeatureMatrix> {
    match source {
        DataSource::Csv { path } => load_dense_csv(path),
        DataSource::Sparse { path, n_features } => load_sparse(path, *n_features),
        DataSource::Synthetic(spec) => generate_synthetic(spec),
    }
    .at(Stage::Load)
}

/// Data after splitting and feature selection.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Splits with every original column, as a saved pipeline receives them.
    pub raw: DataSplits,
    pub splits: DataSplits,
    pub kept_features: Option<Vec<usize>>,
}

impl Prepared {
    pub fn sets(&self) -> [&FeatureMatrix; 3] {
        [&self.splits.train, &self.splits.validation, &self.splits.test]
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> StageResult<Prepared> {
    cfg.validate().at(Stage::Config)?;
    let data = load_data(&cfg.data)?;
    let raw = split_80_10_10(&data, &cfg.split, derive_seed(cfg.seed, "split")).at(Stage::Split)?;
    let (splits, kept_features) = if cfg.top_k > 0 {
        let kept = feature_select_topk(&raw.train, cfg.top_k).at(Stage::Select)?;
        let pick = |m: &FeatureMatrix| m.select_features(&kept).at(Stage::Select);
        let splits = DataSplits {
            train: pick(&raw.train)?,
            validation: pick(&raw.validation)?,
            test: pick(&raw.test)?,
        };
        (splits, Some(kept))
    } else {
        (raw.clone(), None)
    };
    info!(
        "data: {} train, {} validation, {} test samples, {} features",
        splits.train.n_samples(),
        splits.validation.n_samples(),
        splits.test.n_samples(),
        splits.train.n_features()
    );
    Ok(Prepared {
        raw,
        splits,
        kept_features,
    })
}

/// Base classifier with its predictions on train, validation and test.
#[derive(Debug)]
pub struct BaseRun {
    pub stage: BaseStage,
    pub reports: [PredictionReport; 3],
}

pub fn train_base(prep: &Prepared, cfg: &ExperimentConfig, learners: &LearnerRegistry) -> StageResult<BaseRun> {
    let s = &prep.splits;
    let stage = BaseStage::fit(
        learners,
        &cfg.base,
        &s.train,
        &[&s.validation, &s.test],
        derive_seed(cfg.seed, "base"),
    )
    .at(Stage::TrainBase)?;
    let reports = [
        stage.report(&s.train).at(Stage::TrainBase)?,
        stage.report(&s.validation).at(Stage::TrainBase)?,
        stage.report(&s.test).at(Stage::TrainBase)?,
    ];
    Ok(BaseRun { stage, reports })
}

/// Gate fitted on validation data and the resulting split of every set.
#[derive(Debug, Clone)]
pub struct GateRun {
    pub gate: Gate,
    pub calibration: Option<Calibration>,
    pub assignments: [SplitAssignment; 3],
}

pub fn fit_gate(prep: &Prepared, base: &BaseRun, cfg: &ExperimentConfig) -> StageResult<GateRun> {
    let fit = Gate::fit(
        &base.stage,
        &prep.splits.validation,
        &base.reports[1],
        cfg.tolerance,
        &cfg.base,
        derive_seed(cfg.seed, "error-proxy"),
    )
    .at(Stage::Calibrate)?;
    let sets = prep.sets();
    let assignments = [0, 1, 2].map(|k| fit.gate.split(sets[k], &base.reports[k].probabilities));
    let [a, b, c] = assignments;
    Ok(GateRun {
        gate: fit.gate,
        calibration: fit.calibration,
        assignments: [a.at(Stage::Partition)?, b.at(Stage::Partition)?, c.at(Stage::Partition)?],
    })
}

/// Difficult subsets with the base predictions restricted to them.
#[derive(Debug, Clone)]
pub struct DifficultSets {
    pub data: [FeatureMatrix; 3],
    pub reports: [PredictionReport; 3],
}

pub fn difficult_sets(prep: &Prepared, base: &BaseRun, gate: &GateRun) -> StageResult<DifficultSets> {
    let sets = prep.sets();
    let pick = |k: usize| -> StageResult<(FeatureMatrix, PredictionReport)> {
        let ids = &gate.assignments[k].difficult_ids;
        Ok((
            sets[k].select_ids(ids).at(Stage::Partition)?,
            base.reports[k].select_ids(ids).at(Stage::Partition)?,
        ))
    };
    let (d0, r0) = pick(0)?;
    let (d1, r1) = pick(1)?;
    let (d2, r2) = pick(2)?;
    Ok(DifficultSets {
        data: [d0, d1, d2],
        reports: [r0, r1, r2],
    })
}

/// Fits the named retrainer on the difficult sets. The inner `Err` carries a
/// skip reason when there is nothing to learn from.
pub fn fit_head(
    name: &str,
    difficult: &DifficultSets,
    cfg: &ExperimentConfig,
    retrainers: &RetrainerRegistry,
) -> StageResult<Result<Box<dyn DifficultHead>, String>> {
    let retrainer = retrainers.get(name).at(Stage::Retrain)?;
    let train = &difficult.data[0];
    if train.is_empty() {
        return Ok(Err("difficult training set is empty".into()));
    }
    if !train.has_both_classes() {
        return Ok(Err(format!("difficult training set holds only class {}", train.labels()[0])));
    }
    let head = retrainer
        .fit(
            train,
            &difficult.reports[0],
            &difficult.data[1],
            &difficult.reports[1],
            &cfg.retrain,
            derive_seed(cfg.seed, "retrain"),
        )
        .at(Stage::Retrain)?;
    Ok(Ok(head))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Subset and predictor, e.g. `difficult/guided`.
    pub scope: String,
    pub accuracy: f64,
    pub f1: f64,
    pub errors: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    /// Error difference against the base on the same subset.
    pub delta_errors: Option<i64>,
    /// Errors reduction in percent, two decimals.
    pub reduction: Option<f64>,
}

impl TableRow {
    fn new(scope: String, r: &EvaluationReport, base: Option<&EvaluationReport>) -> Result<Self, Error> {
        let delta = base.map(|b| delta_errors(b, r)).transpose()?;
        Ok(Self {
            scope,
            accuracy: r.accuracy,
            f1: r.f1,
            errors: r.total_errors(),
            fp: r.fp,
            fn_: r.fn_,
            n: r.n,
            delta_errors: delta,
            reduction: delta.and_then(|d| errors_reduction(d, base.map_or(0, EvaluationReport::total_errors)).map(round2)),
        })
    }
}

/// Per-set error counts of the base classifier, whole and split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummaryRow {
    pub set: String,
    pub n: usize,
    pub easy: usize,
    pub difficult: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub easy_fp: usize,
    pub easy_fn: usize,
    pub difficult_fp: usize,
    pub difficult_fn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub name: String,
    pub trained: bool,
    pub skip_reason: Option<String>,
    /// Epochs run by each trained network, in training order.
    pub epochs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub set: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub base_kind: String,
    pub n_features: usize,
    pub kept_features: Option<Vec<usize>>,
    pub sizes: [usize; 3],
    pub thresholds: Option<ThresholdPair>,
    pub calibration: Option<Calibration>,
    pub split_summary: Vec<SplitSummaryRow>,
    /// Share of the base classifier's test errors that fall in the
    /// difficult test subset; absent when the base made no test errors.
    pub error_capture: Option<f64>,
    pub table: Vec<TableRow>,
    pub heads: Vec<HeadSummary>,
    pub curves: Vec<CurveSet>,
    /// Retrainer whose pipeline was persisted.
    pub pipeline_retrainer: String,
    /// Whether the reloaded pipeline reproduced the in-memory predictions.
    pub reload_matches: Option<bool>,
}

impl ExperimentReport {
    pub fn row(&self, scope: &str) -> Option<&TableRow> {
        self.table.iter().find(|r| r.scope == scope)
    }
}

/// Everything an experiment produced.
#[derive(Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub pipeline: Pipeline,
    pub prepared: Prepared,
}

fn split_summary(set: &str, report: &PredictionReport, data: &FeatureMatrix, assign: &SplitAssignment) -> StageResult<SplitSummaryRow> {
    let cells = confusion_partition(report, data.labels()).at(Stage::Evaluate)?;
    let difficult: std::collections::BTreeSet<usize> = assign.difficult_ids.iter().copied().collect();
    let count = |ids: &std::collections::BTreeSet<usize>, inside: bool| ids.iter().filter(|id| difficult.contains(id) == inside).count();
    Ok(SplitSummaryRow {
        set: set.into(),
        n: data.n_samples(),
        easy: assign.easy_ids.len(),
        difficult: assign.difficult_ids.len(),
        fp: cells.fp_ids.len(),
        fn_: cells.fn_ids.len(),
        easy_fp: count(&cells.fp_ids, false),
        easy_fn: count(&cells.fn_ids, false),
        difficult_fp: count(&cells.fp_ids, true),
        difficult_fn: count(&cells.fn_ids, true),
    })
}

/// Combined test predictions: base on easy samples, `head` on difficult ones.
fn combined_predictions(
    test: &FeatureMatrix,
    base: &PredictionReport,
    difficult_test: &FeatureMatrix,
    head_preds: &[u8],
) -> Vec<u8> {
    let mut preds = base.predictions.clone();
    let index = test.id_index();
    for (&id, &p) in difficult_test.ids().iter().zip(head_preds) {
        preds[index[&id]] = p;
    }
    preds
}

pub fn run_experiment(cfg: &ExperimentConfig) -> StageResult<ExperimentRun> {
    run_experiment_with(cfg, &LearnerRegistry::with_builtins(), &RetrainerRegistry::with_builtins())
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    learners: &LearnerRegistry,
    retrainers: &RetrainerRegistry,
) -> StageResult<ExperimentRun> {
    let prep = prepare(cfg)?;
    let base = train_base(&prep, cfg, learners)?;
    let gate = fit_gate(&prep, &base, cfg)?;
    let difficult = difficult_sets(&prep, &base, &gate)?;
    let sets = prep.sets();
    let test = sets[2];
    let dtest = &difficult.data[2];

    let mut split_rows = Vec::new();
    for k in 0..3 {
        split_rows.push(split_summary(SET_NAMES[k], &base.reports[k], sets[k], &gate.assignments[k])?);
    }
    let test_summary = &split_rows[2];
    let test_errors = test_summary.fp + test_summary.fn_;
    let error_capture = (test_errors > 0)
        .then(|| (test_summary.difficult_fp + test_summary.difficult_fn) as f64 / test_errors as f64);

    let mut curves = Vec::new();
    for k in [1, 2] {
        let cells = confusion_partition(&base.reports[k], sets[k].labels()).at(Stage::Evaluate)?;
        let points = accumulated_error_curve(&base.reports[k].ids, &base.reports[k].probabilities, &cells, &default_grid())
            .at(Stage::Evaluate)?;
        curves.push(CurveSet {
            set: SET_NAMES[k].into(),
            points,
        });
    }

    let whole_base = evaluate(&base.reports[2].predictions, test.labels()).at(Stage::Evaluate)?;
    let mut table = vec![TableRow::new("whole/base".into(), &whole_base, None).at(Stage::Evaluate)?];
    let easy_test = test.select_ids(&gate.assignments[2].easy_ids).at(Stage::Evaluate)?;
    if !easy_test.is_empty() {
        let easy_report = base.reports[2].select_ids(easy_test.ids()).at(Stage::Evaluate)?;
        let r = evaluate(&easy_report.predictions, easy_test.labels()).at(Stage::Evaluate)?;
        table.push(TableRow::new("easy/base".into(), &r, None).at(Stage::Evaluate)?);
    }
    let difficult_base = if dtest.is_empty() {
        None
    } else {
        let r = evaluate(&difficult.reports[2].predictions, dtest.labels()).at(Stage::Evaluate)?;
        table.push(TableRow::new("difficult/base".into(), &r, None).at(Stage::Evaluate)?);
        Some(r)
    };

    let mut names = vec![cfg.retrainer.clone()];
    names.extend(cfg.baselines.iter().filter(|b| **b != cfg.retrainer).cloned());
    let mut summaries = Vec::new();
    let mut primary_head = None;
    for name in &names {
        info!("retraining with {name}");
        match fit_head(name, &difficult, cfg, retrainers)? {
            Err(reason) => {
                warn!("{name} retraining skipped: {reason}");
                summaries.push(HeadSummary {
                    name: name.clone(),
                    trained: false,
                    skip_reason: Some(reason),
                    epochs: Vec::new(),
                });
            }
            Ok(head) => {
                let preds = head.predict(dtest).at(Stage::Evaluate)?;
                if let Some(b) = &difficult_base {
                    let r = evaluate(&preds, dtest.labels()).at(Stage::Evaluate)?;
                    table.push(TableRow::new(format!("difficult/{name}"), &r, Some(b)).at(Stage::Evaluate)?);
                }
                let combined = combined_predictions(test, &base.reports[2], dtest, &preds);
                let r = evaluate(&combined, test.labels()).at(Stage::Evaluate)?;
                table.push(TableRow::new(format!("combined/{name}"), &r, Some(&whole_base)).at(Stage::Evaluate)?);
                summaries.push(HeadSummary {
                    name: name.clone(),
                    trained: true,
                    skip_reason: None,
                    epochs: head.training_outcomes().iter().map(|o| o.epochs_run).collect(),
                });
                if *name == cfg.retrainer {
                    primary_head = Some((head, combined));
                }
            }
        }
    }

    let (head, expected) = match primary_head {
        Some((h, combined)) => (Some(h), combined),
        None => (None, base.reports[2].predictions.clone()),
    };
    let pipeline = Pipeline {
        features: prep.kept_features.clone(),
        base: base.stage,
        gate: gate.gate.clone(),
        head,
        metadata: serde_json::json!({
            "seed": cfg.seed,
            "retrainer": cfg.retrainer,
            "config": cfg,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    };
    let in_memory = pipeline.predict(&prep.raw.test).at(Stage::Predict)?;
    if in_memory.labels != expected {
        return Err(StageError {
            stage: Stage::Predict,
            source: Error::InvalidInput("pipeline routing disagrees with the evaluated predictions".into()),
        });
    }

    let report = ExperimentReport {
        seed: cfg.seed,
        base_kind: cfg.base.kind.clone(),
        n_features: prep.splits.train.n_features(),
        kept_features: prep.kept_features.clone(),
        sizes: sets.map(|m| m.n_samples()),
        thresholds: gate.gate.thresholds(),
        calibration: gate.calibration.clone(),
        split_summary: split_rows,
        error_capture,
        table,
        heads: summaries,
        curves,
        pipeline_retrainer: cfg.retrainer.clone(),
        reload_matches: None,
    };
    Ok(ExperimentRun {
        report,
        pipeline,
        prepared: prep,
    })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> StageError + '_ {
    move |e| StageError {
        stage: Stage::Report,
        source: Error::InvalidInput(format!("{}: {e}", path.display())),
    }
}

/// Writes the report bundle into `dir`: `report.json`, `table.csv`,
/// `split_summary.csv`, `curves_<set>.csv`, `predictions.csv`,
/// `pipeline.hspl` and `config.toml`. Reloads the saved pipeline and records
/// whether it reproduces the test predictions.
pub fn write_bundle(run: &mut ExperimentRun, cfg: &ExperimentConfig, dir: &Path) -> StageResult<PathBuf> {
    std::fs::create_dir_all(dir).at(Stage::Report)?;
    let pipeline_path = dir.join("pipeline.hspl");
    run.pipeline.save(&pipeline_path).at(Stage::Persist)?;
    let reloaded = Pipeline::load_builtin(&pipeline_path).at(Stage::Persist)?;
    let before = run.pipeline.predict(&run.prepared.raw.test).at(Stage::Predict)?;
    let after = reloaded.predict(&run.prepared.raw.test).at(Stage::Predict)?;
    run.report.reload_matches = Some(before == after);

    let table_path = dir.join("table.csv");
    let mut w = csv::Writer::from_path(&table_path).map_err(csv_err(&table_path))?;
    w.write_record(["scope", "A", "F1", "errors", "ΔErrors", "reduction"]).map_err(csv_err(&table_path))?;
    for r in &run.report.table {
        w.write_record([
            r.scope.clone(),
            format!("{:.2}", r.accuracy * 100.0),
            format!("{:.2}", r.f1 * 100.0),
            r.errors.to_string(),
            fmt_opt(r.delta_errors),
            fmt_opt(r.reduction.map(|v| format!("{v:.2}"))),
        ])
        .map_err(csv_err(&table_path))?;
    }
    w.flush().at(Stage::Report)?;

    let summary_path = dir.join("split_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(csv_err(&summary_path))?;
    for r in &run.report.split_summary {
        w.serialize(r).map_err(csv_err(&summary_path))?;
    }
    w.flush().at(Stage::Report)?;

    for curve in &run.report.curves {
        let path = dir.join(format!("curves_{}.csv", curve.set));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        for p in &curve.points {
            w.serialize(p).map_err(csv_err(&path))?;
        }
        w.flush().at(Stage::Report)?;
    }

    let pred_path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&pred_path).map_err(csv_err(&pred_path))?;
    w.write_record(["id", "label", "probability", "route", "prediction"]).map_err(csv_err(&pred_path))?;
    for i in 0..before.ids.len() {
        w.write_record([
            before.ids[i].to_string(),
            run.prepared.raw.test.labels()[i].to_string(),
            before.probabilities[i].to_string(),
            before.routes[i].as_str().to_string(),
            before.labels[i].to_string(),
        ])
        .map_err(csv_err(&pred_path))?;
    }
    w.flush().at(Stage::Report)?;

    std::fs::write(dir.join("config.toml"), cfg.to_toml().at(Stage::Report)?).at(Stage::Report)?;
    let json = serde_json::to_string_pretty(&run.report).at(Stage::Report)?;
    std::fs::write(dir.join("report.json"), json).at(Stage::Report)?;
    Ok(pipeline_path)
}

/// Route counts of a prediction, for logging.
pub fn route_counts(routes: &[Route]) -> (usize, usize) {
    let aux = routes.iter().filter(|&&r| r == Route::Auxiliary).count();
    (routes.len() - aux, aux)
}
