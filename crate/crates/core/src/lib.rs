//! Two-stage binary classification.
//!
//! A base classifier scores every sample. Thresholds calibrated on validation
//! data send confidently scored samples to the base prediction and the rest to
//! an auxiliary classifier trained on contrastive embeddings of the difficult
//! training samples.

pub mod classifiers;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod store;
pub mod thresholding;

pub use data::{
    confusion_partition, predict_label, Confusion, ConfusionPartition, FeatureMatrix, PredictionReport,
    SplitAssignment, ThresholdPair,
};
pub use error::{Error, Result};
