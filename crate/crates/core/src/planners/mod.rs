//! Sampling-based planners: the guided tree planner over an injectable sampler, an RRT*
//! baseline, path shortcutting and path metrics.

mod path;
mod rrt_star;
mod tree;
mod vqmpt;

pub use path::{
    connect, path_is_valid_exact, path_length, read_path_csv, simplify, termination_met, write_path_csv,
    PATH_CSV_HEADER,
};
pub use rrt_star::{rrt_star_plan, RrtStarConfig};
pub use tree::Tree;
pub use vqmpt::{vqmpt_plan, VqmptConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env2d::{seeded_rng, Config2D, Rng as EnvRng, World};

/// Ordered waypoints.
pub type Trajectory = Vec<Config2D>;

/// Source of candidate configurations for a planner. Samplers own their random state.
pub trait Sampler {
    fn draw(&mut self) -> Config2D;
    fn kind(&self) -> SamplerKind;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Gmm,
}

/// Uniform sampling over the workspace square.
pub struct UniformSampler {
    side: f64,
    rng: EnvRng,
}

impl UniformSampler {
    pub fn new(world: &World, seed: u64) -> Self {
        Self { side: world.side, rng: seeded_rng(seed) }
    }
}

impl Sampler for UniformSampler {
    fn draw(&mut self) -> Config2D {
        use rand::Rng;
        Config2D::new(self.rng.random_range(0.0..=self.side), self.rng.random_range(0.0..=self.side))
    }

    fn kind(&self) -> SamplerKind {
        SamplerKind::Uniform
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerResult {
    pub success: bool,
    pub path: Option<Trajectory>,
    /// Configurations inserted into the tree, root included.
    pub vertices: usize,
    pub samples_drawn: usize,
    pub wall_time: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("start configuration is not valid")]
    InvalidStart,
    #[error("{0}")]
    Domain(String),
}
