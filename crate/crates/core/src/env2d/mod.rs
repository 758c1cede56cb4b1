//! 2D point-robot worlds: obstacles, occupancy rasters, validity checks and uniform sampling.

mod costmap;
mod geometry;
mod world;

pub use costmap::{render_costmap, Costmap, MIN_RESOLUTION};
pub use geometry::{Config2D, Obstacle};
pub use world::{
    generate_world, random_problem, sample_uniform, ProblemInstance, World, WorldConfig, MIN_SEPARATION,
};

use rand::SeedableRng;
use thiserror::Error;

/// The project-wide seeded generator: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`),
/// seeded through `SeedableRng::seed_from_u64`.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Defaults for the desk-scale setup.
pub const DEFAULT_SIDE: f64 = 1.0;
pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_GOAL_RADIUS_FRACTION: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("world generation failed after {attempts} attempts")]
    Generation { attempts: usize },
    #[error("no valid start/goal pair after {rejections} rejections")]
    InfeasibleProblem { rejections: usize },
    #[error("{what} ({x}, {y}) is not a valid state")]
    InvalidState { what: &'static str, x: f64, y: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}
