//! Multilayer perceptrons, the supervised contrastive loss and training loops.

pub mod mlp;
pub mod supcon;
pub mod train;

pub use mlp::{Activation, LayerSpec, Mlp, MlpSpec, Mode};
pub use supcon::{l2_normalize, supcon_loss, supcon_loss_raw, DEFAULT_TEMPERATURE};
pub use train::{
    batch_size, stratified_batches, to_array, train_auxiliary, train_model, AuxiliaryClassifier,
    EncoderProjectionModel, NetworkShape, TrainConfig, TrainOutcome,
};
