use std::fmt;

/// Experiment step where a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Split,
    Select,
    TrainBase,
    Calibrate,
    Partition,
    Retrain,
    Evaluate,
    Persist,
    Predict,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Select => "feature-selection",
            Stage::TrainBase => "train-base",
            Stage::Calibrate => "calibrate",
            Stage::Partition => "easy-difficult-split",
            Stage::Retrain => "retrain",
            Stage::Evaluate => "evaluate",
            Stage::Persist => "persist",
            Stage::Predict => "predict",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: hardsplit_core::Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<hardsplit_core::Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}
