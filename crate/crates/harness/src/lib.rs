//! Experiment harness: configuration, data files, synthetic data, splitting,
//! feature selection, the end-to-end driver and the command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod select;
pub mod split;
pub mod synth;

pub use config::{DataSource, ExperimentConfig};
pub use error::{Stage, StageError};
pub use experiment::{run_experiment, write_bundle, ExperimentReport, ExperimentRun};
