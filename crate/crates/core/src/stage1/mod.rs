//! Trajectory autoencoder: a transformer encoder, factorized and normalized vector
//! quantization, and an MLP decoder that maps each code to a Gaussian over the workspace.

mod codebook;
mod model;
mod train;

pub use codebook::{CodeToken, Codebook};
pub use model::{DecodedVars, Stage1Config, Stage1Model, VqTerms, STATE_DIM};
pub use train::{train_stage1, EpochRecord, StepRecord, TrainConfig, TrainLog};

pub(crate) use model::check_layout;
