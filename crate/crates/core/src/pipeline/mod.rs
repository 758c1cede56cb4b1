//! Dataset generation and the checkpoint/dataset file formats.

mod checkpoint;
mod container;
mod dataset_io;
mod datasets;
mod predict;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use container::{Container, NamedArray, CHECKPOINT_MAGIC, DATASET_MAGIC, FORMAT_VERSION};
pub use predict::{plan_guided, predict_gmm, predict_indices, prepare_examples, GuidedPlan};
pub use dataset_io::{load_dataset, save_dataset, Dataset};
pub use datasets::{
    coverage, gen_environment, gen_stage1_dataset, gen_stage2_dataset, record_costmap, Stage1DataConfig,
    Stage2DataConfig, Stage2Record, MAX_WAYPOINTS,
};

use thiserror::Error;

use crate::env2d::EnvError;
use crate::numerics::NumericsError;
use crate::planners::PlannerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file is truncated")]
    Truncated,
    #[error("array {name:?}: shape {expected:?} does not match {found} values")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::UnexpectedEof => PipelineError::Truncated,
            _ => PipelineError::Io(e.to_string()),
        }
    }
}
