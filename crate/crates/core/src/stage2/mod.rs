//! Index predictor: costmap patch tokens and start/goal queries fused by cross-attention,
//! an autoregressive decoder over codebook indices, beam search, and the sampling mixture.

mod beam;
mod gmm;
mod labels;
mod model;
mod train;

pub use beam::{beam_search, brute_force_best, Hypothesis, NextTokenModel};
pub use gmm::{build_gmm, Gmm, GmmSampler};
pub use labels::{densify, dedup_consecutive, ground_truth_indices, labels_from_indices, LABEL_SPACING};
pub use model::{costmap_patches, Stage2Config, Stage2Model};
pub use train::{next_index_accuracy, train_stage2, Stage2Example};

use crate::numerics::{NumericsError, Tensor};
use crate::stage1::Codebook;

/// A trained model bound to one planning context, scoring next indices for beam search.
pub struct ContextScorer<'a> {
    pub model: &'a Stage2Model,
    pub codebook: &'a Codebook,
    pub context: Tensor,
}

impl NextTokenModel for ContextScorer<'_> {
    fn classes(&self) -> usize {
        self.model.config.codes + 1
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
        self.model.next_log_probs(self.codebook, &self.context, prefix)
    }
}
