//! Minimal reverse-mode autodiff core with the layers, losses and optimizer
//! the models are built from.

mod gaussian;
pub mod gradcheck;
mod graph;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use gaussian::{gaussian_nll, GaussianParams};
pub use graph::{softplus, Gradients, Graph, Mask, NllPairing, Var, LAYERNORM_EPS};
pub use optim::{adam_step, clip_global_norm, AdamState, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::{nll_one, tri};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank { op: &'static str, expected: usize, got: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}: every extent must be positive")]
    InvalidShape(Vec<usize>),
    #[error("rows have different lengths")]
    Ragged,
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Range { op: &'static str, index: usize, bound: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("covariance is not positive definite (nonpositive D entry)")]
    NotPositiveDefinite,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}
