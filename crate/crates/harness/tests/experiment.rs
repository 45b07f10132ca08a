use std::collections::BTreeSet;

use hardsplit::config::{DataSource, ExperimentConfig};
use hardsplit::experiment::{prepare, run_experiment, train_base, write_bundle};
use hardsplit::io::write_dense_csv;
use hardsplit::synth::{generate_synthetic, xor_rule, SyntheticSpec};
use hardsplit::Stage;
use hardsplit_core::classifiers::{LearnerRegistry, LinearConfig, SvmLearner, BaseLearner, BaseConfig};
use hardsplit_core::metrics::evaluate;
use hardsplit_core::nn::{NetworkShape, TrainConfig};
use hardsplit_core::pipeline::{Gate, Pipeline, RetrainConfig, Route};
use hardsplit_core::predict_label;

fn small(seed: u64, spec: SyntheticSpec) -> ExperimentConfig {
    let train = TrainConfig {
        max_epochs: 30,
        patience: 5,
        learning_rate: 0.05,
        temperature: 0.1,
        ..TrainConfig::default()
    };
    ExperimentConfig {
        seed,
        data: DataSource::Synthetic(spec),
        retrain: RetrainConfig {
            shape: NetworkShape {
                encoder: vec![32, 16],
                projection: vec![8, 4],
                auxiliary: vec![16, 8],
            },
            contrastive: train.clone(),
            auxiliary: train,
        },
        ..ExperimentConfig::default()
    }
}

fn planted(n: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_per_class: n,
        dim: 6,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn linear_base_is_blind_inside_the_band() {
    let spec = planted(2000, 3);
    let data = generate_synthetic(&spec).unwrap();
    let model = SvmLearner.fit(&data, &BaseConfig::default(), 1).unwrap();
    let scores = model.scores(&data).unwrap();
    let band: Vec<usize> = (0..data.n_samples()).filter(|&i| spec.in_band(data.row(i)[0])).collect();
    let linear_hits = band
        .iter()
        .filter(|&&i| u8::from(scores[i] >= 0.0) == data.labels()[i])
        .count();
    let oracle_hits = band
        .iter()
        .filter(|&&i| xor_rule(data.row(i)[1], data.row(i)[2]) == data.labels()[i])
        .count();
    let acc = linear_hits as f64 / band.len() as f64;
    assert!((acc - 0.5).abs() <= 0.1, "linear band accuracy {acc}");
    assert_eq!(oracle_hits, band.len());
}

#[test]
fn zero_covariance_gives_separable_data_and_no_difficult_samples() {
    let spec = SyntheticSpec {
        n_per_class: 100,
        cov_scale: 0.0,
        planted: false,
        ..SyntheticSpec::default()
    };
    let cfg = small(1, spec);
    let prep = prepare(&cfg).unwrap();
    let base = train_base(&prep, &cfg, &LearnerRegistry::with_builtins()).unwrap();
    let test_acc = evaluate(&base.reports[2].predictions, prep.splits.test.labels()).unwrap().accuracy;
    assert_eq!(test_acc, 1.0);
    let run = run_experiment(&cfg).unwrap();
    assert!(run.report.split_summary.iter().all(|r| r.difficult == 0));
    assert!(run.report.heads.iter().all(|h| !h.trained && h.skip_reason.is_some()));
    assert!(run.report.row("difficult/guided").is_none());
    let pred = run.pipeline.predict(&prep.raw.test).unwrap();
    assert_eq!(pred.count(Route::Auxiliary), 0);
}

#[test]
fn experiment_is_reproducible_and_persisted() {
    let cfg = small(5, planted(300, 5));
    let dir = tempfile::tempdir().unwrap();
    let mut a = run_experiment(&cfg).unwrap();
    let path = write_bundle(&mut a, &cfg, dir.path()).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.report.reload_matches, Some(true));
    let mut a_report = a.report.clone();
    a_report.reload_matches = None;
    assert_eq!(a_report, b.report);
    assert_eq!(a.pipeline.to_bytes().unwrap(), b.pipeline.to_bytes().unwrap());
    for f in ["report.json", "table.csv", "split_summary.csv", "curves_validation.csv", "curves_test.csv", "predictions.csv", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    // The reloaded pipeline reproduces the guided rows.
    let loaded = Pipeline::load_builtin(&path).unwrap();
    let test = &a.prepared.raw.test;
    let pred = loaded.predict(test).unwrap();
    let combined = evaluate(&pred.labels, test.labels()).unwrap();
    let row = a.report.row("combined/guided").unwrap();
    assert_eq!((combined.fp, combined.fn_), (row.fp, row.fn_));
    let aux: Vec<usize> = (0..test.n_samples()).filter(|&i| pred.routes[i] == Route::Auxiliary).collect();
    let labels: Vec<u8> = aux.iter().map(|&i| test.labels()[i]).collect();
    let preds: Vec<u8> = aux.iter().map(|&i| pred.labels[i]).collect();
    let difficult = evaluate(&preds, &labels).unwrap();
    let row = a.report.row("difficult/guided").unwrap();
    assert_eq!((difficult.fp, difficult.fn_), (row.fp, row.fn_));
}

#[test]
fn base_errors_add_up_over_easy_and_difficult() {
    let run = run_experiment(&small(7, planted(300, 7))).unwrap();
    for r in &run.report.split_summary {
        assert_eq!(r.fp, r.easy_fp + r.difficult_fp, "{r:?}");
        assert_eq!(r.fn_, r.easy_fn + r.difficult_fn, "{r:?}");
        assert_eq!(r.n, r.easy + r.difficult);
    }
    let whole = run.report.row("whole/base").unwrap();
    let easy = run.report.row("easy/base").unwrap();
    let difficult = run.report.row("difficult/base").unwrap();
    assert_eq!(whole.errors, easy.errors + difficult.errors);
}

#[test]
fn combined_predictions_cover_the_test_set_once() {
    let run = run_experiment(&small(8, planted(300, 8))).unwrap();
    let test = &run.prepared.raw.test;
    let pred = run.pipeline.predict(test).unwrap();
    let ids: BTreeSet<usize> = pred.ids.iter().copied().collect();
    assert_eq!(ids.len(), test.n_samples());
    assert_eq!(ids, test.ids().iter().copied().collect());
    assert_eq!(pred.count(Route::Base) + pred.count(Route::Auxiliary), test.n_samples());
    let t = run.report.thresholds.unwrap();
    for (p, r) in pred.probabilities.iter().zip(&pred.routes) {
        assert_eq!(*r == Route::Base, t.is_easy(*p));
    }
}

#[test]
fn hard_label_base_uses_error_proxy() {
    let mut cfg = small(9, planted(200, 9));
    cfg.base.kind = "knn".into();
    cfg.base.error_proxy.n_trees = 10;
    let dir = tempfile::tempdir().unwrap();
    let mut run = run_experiment(&cfg).unwrap();
    assert!(matches!(run.pipeline.gate, Gate::ErrorProxy(_)));
    assert!(run.report.thresholds.is_none());
    write_bundle(&mut run, &cfg, dir.path()).unwrap();
    assert_eq!(run.report.reload_matches, Some(true));
}

#[test]
fn probability_bases_run_end_to_end() {
    for kind in ["logistic", "forest"] {
        let mut cfg = small(10, planted(200, 10));
        cfg.base.kind = kind.into();
        cfg.base.forest.n_trees = 10;
        let run = run_experiment(&cfg).unwrap();
        assert!(run.report.row("whole/base").is_some(), "{kind}");
        let pred = run.pipeline.predict(&run.prepared.raw.test).unwrap();
        for (p, l) in pred.probabilities.iter().zip(&pred.labels).zip(&pred.routes).filter(|(_, r)| **r == Route::Base).map(|(x, _)| x) {
            assert_eq!(predict_label(*p), *l);
        }
    }
}

#[test]
fn feature_selection_is_stored_in_the_pipeline() {
    let mut cfg = small(11, planted(200, 11));
    cfg.top_k = 3;
    let run = run_experiment(&cfg).unwrap();
    let kept = run.report.kept_features.clone().unwrap();
    assert_eq!(kept.len(), 3);
    assert!(kept.contains(&0), "{kept:?}");
    assert_eq!(run.pipeline.features.as_deref(), Some(kept.as_slice()));
    assert_eq!(run.report.n_features, 3);
    let pred = run.pipeline.predict(&run.prepared.raw.test).unwrap();
    assert_eq!(pred.labels.len(), run.prepared.raw.test.n_samples());
}

#[test]
fn csv_source_matches_synthetic_source() {
    let spec = planted(150, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_dense_csv(&path, &generate_synthetic(&spec).unwrap()).unwrap();
    let from_csv = ExperimentConfig {
        data: DataSource::Csv { path },
        ..small(12, spec.clone())
    };
    let a = run_experiment(&from_csv).unwrap();
    let b = run_experiment(&small(12, spec)).unwrap();
    assert_eq!(a.report.table, b.report.table);
}

#[test]
fn failures_name_their_stage() {
    let cfg = ExperimentConfig {
        data: DataSource::Csv {
            path: "/nonexistent/data.csv".into(),
        },
        ..ExperimentConfig::default()
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Load);
    assert!(err.to_string().starts_with("[load]"));

    let mut cfg = small(1, planted(100, 1));
    cfg.retrainer = "boosted".into();
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Retrain);

    let mut cfg = small(1, planted(100, 1));
    cfg.base.kind = "gbdt".into();
    assert_eq!(run_experiment(&cfg).unwrap_err().stage, Stage::TrainBase);

    let mut cfg = small(1, planted(100, 1));
    cfg.split.train = 0.9;
    assert_eq!(run_experiment(&cfg).unwrap_err().stage, Stage::Config);
}

#[test]
fn linear_config_is_forwarded() {
    let mut cfg = small(13, planted(100, 13));
    cfg.base.linear = LinearConfig {
        epochs: 1,
        ..LinearConfig::default()
    };
    let a = run_experiment(&cfg).unwrap();
    cfg.base.linear.epochs = 20;
    let b = run_experiment(&cfg).unwrap();
    assert_ne!(a.report.calibration, b.report.calibration);
}
