//! Vector-quantized motion planning transformers for a 2D point robot.
//!
//! Stage 1 learns a codebook of planning-space Gaussians from trajectories,
//! Stage 2 predicts a sequence of codebook entries for a planning problem,
//! and the planners sample from the resulting mixture.

pub mod numerics;
pub mod env2d;
pub mod planners;
pub mod stage1;
pub mod pipeline;
pub mod stage2;
