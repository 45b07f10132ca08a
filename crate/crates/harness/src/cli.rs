//! Command-line front end.
//!
//! Every subcommand derives its inputs from the experiment config and the
//! master seed, so a stage can be rerun on its own and reproduces what the
//! full `run` would compute at that point.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hardsplit_core::classifiers::LearnerRegistry;
use hardsplit_core::metrics::evaluate;
use hardsplit_core::pipeline::{Pipeline, RetrainerRegistry, Route};
use hardsplit_core::{Error, FeatureMatrix};
use log::info;
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{AtStage, Stage};
use crate::experiment::{
    difficult_sets, fit_gate, prepare, route_counts, run_experiment, train_base, write_bundle, StageResult, SET_NAMES,
};
use crate::io::{load_dense_csv, load_sparse, write_dense_csv};
use crate::synth::generate_synthetic;

#[derive(Debug, Parser)]
#[command(name = "hardsplit", version, about = "Easy/difficult split retraining for binary classifiers")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic dataset as dense CSV.
    Synth,
    /// Train the base classifier and report its metrics on every split.
    TrainBase,
    /// Calibrate the easy/difficult thresholds on validation data.
    Calibrate,
    /// Split every set into easy and difficult samples.
    Split,
    /// Fit the guided retraining pipeline and save it.
    GuidedRetrain,
    /// Fit the classic retraining pipeline and save it.
    ClassicRetrain,
    /// Evaluate a saved pipeline on labelled data.
    Evaluate(PipelineInput),
    /// Predict with a saved pipeline.
    Predict(PipelineInput),
    /// Run the full experiment and write the report bundle.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Csv,
    Sparse,
}

#[derive(Debug, Args)]
pub struct PipelineInput {
    /// Saved pipeline container.
    #[arg(long)]
    pub pipeline: PathBuf,
    /// Data file; labels are required for `evaluate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
}

fn load_config(cli: &Cli) -> StageResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).at(Stage::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate().at(Stage::Config)?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> StageResult<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).at(Stage::Report)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> StageResult<()> {
    let text = serde_json::to_string_pretty(value).at(Stage::Report)?;
    std::fs::write(path, text).at(Stage::Report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_input(input: &PipelineInput) -> StageResult<FeatureMatrix> {
    let format = input.format.unwrap_or_else(|| {
        if input.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            InputFormat::Csv
        } else {
            InputFormat::Sparse
        }
    });
    match format {
        InputFormat::Csv => load_dense_csv(&input.input),
        InputFormat::Sparse => load_sparse(&input.input, None),
    }
    .at(Stage::Load)
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> StageResult<()> {
    let cfg = load_config(cli)?;
    let learners = LearnerRegistry::with_builtins();
    let retrainers = RetrainerRegistry::with_builtins();
    match &cli.command {
        Command::Synth => {
            let spec = match &cfg.data {
                DataSource::Synthetic(spec) => spec.clone(),
                _ => {
                    return Err(Error::Config("config data source is not synthetic".into())).at(Stage::Config);
                }
            };
            let data = generate_synthetic(&spec).at(Stage::Load)?;
            let path = out_dir(&cfg)?.join("data.csv");
            write_dense_csv(&path, &data).at(Stage::Report)?;
            println!("wrote {} ({} samples, {} features)", path.display(), data.n_samples(), data.n_features());
        }
        Command::TrainBase => {
            let prep = prepare(&cfg)?;
            let base = train_base(&prep, &cfg, &learners)?;
            let mut reports = serde_json::Map::new();
            for (k, set) in prep.sets().into_iter().enumerate() {
                let r = evaluate(&base.reports[k].predictions, set.labels()).at(Stage::Evaluate)?;
                println!(
                    "{:<10} accuracy {:.4}  F1 {:.4}  FP {}  FN {}",
                    SET_NAMES[k], r.accuracy, r.f1, r.fp, r.fn_
                );
                reports.insert(SET_NAMES[k].into(), serde_json::to_value(r).at(Stage::Report)?);
            }
            write_json(&out_dir(&cfg)?.join("base_report.json"), &reports)?;
        }
        Command::Calibrate => {
            let prep = prepare(&cfg)?;
            let base = train_base(&prep, &cfg, &learners)?;
            let gate = fit_gate(&prep, &base, &cfg)?;
            match (&gate.calibration, gate.gate.thresholds()) {
                (Some(c), Some(t)) => println!(
                    "th_n {:.6}  th_p {:.6}  (validation FP {}, FN {}; tolerated {} / {})",
                    t.th_n, t.th_p, c.fp_v, c.fn_v, c.tolerated.tolerated_fps, c.tolerated.tolerated_fns
                ),
                _ => println!("hard-label base classifier: easy samples come from the error proxy"),
            }
            write_json(
                &out_dir(&cfg)?.join("calibration.json"),
                &serde_json::json!({ "thresholds": gate.gate.thresholds(), "calibration": gate.calibration }),
            )?;
        }
        Command::Split => {
            let prep = prepare(&cfg)?;
            let base = train_base(&prep, &cfg, &learners)?;
            let gate = fit_gate(&prep, &base, &cfg)?;
            let difficult = difficult_sets(&prep, &base, &gate)?;
            let mut out = serde_json::Map::new();
            for (name, a) in SET_NAMES.iter().zip(&gate.assignments) {
                println!(
                    "{:<10} easy {:>6}  difficult {:>6}",
                    name,
                    a.easy_ids.len(),
                    a.difficult_ids.len()
                );
                out.insert((*name).into(), serde_json::to_value(a).at(Stage::Report)?);
            }
            debug_assert_eq!(difficult.data[0].n_samples(), gate.assignments[0].difficult_ids.len());
            write_json(&out_dir(&cfg)?.join("split.json"), &out)?;
        }
        Command::GuidedRetrain | Command::ClassicRetrain | Command::Run => {
            let mut cfg = cfg.clone();
            match cli.command {
                Command::GuidedRetrain => {
                    cfg.retrainer = "guided".into();
                    cfg.baselines.clear();
                }
                Command::ClassicRetrain => {
                    cfg.retrainer = "classic".into();
                    cfg.baselines.clear();
                }
                _ => {}
            }
            let mut run = run_experiment(&cfg)?;
            let dir = out_dir(&cfg)?;
            let path = write_bundle(&mut run, &cfg, &dir)?;
            for row in &run.report.table {
                println!(
                    "{:<20} A {:>6.2}  F1 {:>6.2}  errors {:>5}  ΔErrors {:>6}  reduction {}",
                    row.scope,
                    row.accuracy * 100.0,
                    row.f1 * 100.0,
                    row.errors,
                    row.delta_errors.map_or_else(|| "NA".into(), |d| d.to_string()),
                    row.reduction.map_or_else(|| "NA".into(), |r| format!("{r:.2}%")),
                );
            }
            println!("pipeline saved to {}", path.display());
            println!("report bundle in {}", dir.display());
        }
        Command::Evaluate(input) => {
            let pipeline = Pipeline::load(&input.pipeline, &learners, &retrainers).at(Stage::Persist)?;
            let data = load_input(input)?;
            let pred = pipeline.predict(&data).at(Stage::Predict)?;
            let whole = evaluate(&pred.labels, data.labels()).at(Stage::Evaluate)?;
            let (n_base, n_aux) = route_counts(&pred.routes);
            println!(
                "accuracy {:.4}  F1 {:.4}  FP {}  FN {}  (base-routed {n_base}, auxiliary-routed {n_aux})",
                whole.accuracy, whole.f1, whole.fp, whole.fn_
            );
            write_json(&out_dir(&cfg)?.join("evaluation.json"), &whole)?;
        }
        Command::Predict(input) => {
            let pipeline = Pipeline::load(&input.pipeline, &learners, &retrainers).at(Stage::Persist)?;
            let data = load_input(input)?;
            let pred = pipeline.predict(&data).at(Stage::Predict)?;
            let path = out_dir(&cfg)?.join("predictions.csv");
            let mut w = csv::Writer::from_path(&path)
                .map_err(|e| Error::InvalidInput(e.to_string()))
                .at(Stage::Report)?;
            let io = |e: csv::Error| Error::InvalidInput(e.to_string());
            w.write_record(["id", "probability", "route", "prediction"]).map_err(io).at(Stage::Report)?;
            for i in 0..pred.ids.len() {
                w.write_record([
                    pred.ids[i].to_string(),
                    pred.probabilities[i].to_string(),
                    pred.routes[i].as_str().to_string(),
                    pred.labels[i].to_string(),
                ])
                .map_err(io)
                .at(Stage::Report)?;
            }
            w.flush().at(Stage::Report)?;
            info!("{} samples routed to the auxiliary head", pred.count(Route::Auxiliary));
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Runs the CLI and maps failures to a diagnostic and exit status 1.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                std::process::ExitCode::from(2)
            } else {
                std::process::ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

