use log::{info, warn};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::env2d::{
    generate_world, random_problem, render_costmap, seeded_rng, Config2D, Costmap, World, WorldConfig,
    DEFAULT_GOAL_RADIUS_FRACTION, DEFAULT_RESOLUTION,
};
use crate::planners::{path_is_valid_exact, rrt_star_plan, simplify, RrtStarConfig, Trajectory};

/// Settings of the obstacle-free trajectory generator. Lengths are fractions of the side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1DataConfig {
    pub side: f64,
    pub spacing: f64,
    pub jitter: f64,
}

impl Default for Stage1DataConfig {
    fn default() -> Self {
        Self { side: 1.0, spacing: 0.05, jitter: 0.02 }
    }
}

/// Upper bound on stored trajectory length.
pub const MAX_WAYPOINTS: usize = 64;

fn snap(v: f64) -> f64 {
    v as f32 as f64
}

/// Jittered straight lines between random, well-separated endpoints in an empty world.
pub fn gen_stage1_dataset(count: usize, seed: u64, config: &Stage1DataConfig) -> Result<Vec<Trajectory>, PipelineError> {
    if count == 0 {
        return Err(PipelineError::Config("count must be at least 1".into()));
    }
    if !(config.side > 0.0) || !(config.spacing > 0.0) || !(config.jitter >= 0.0) {
        return Err(PipelineError::Config("side and spacing must be positive, jitter nonnegative".into()));
    }
    let s = config.side;
    let world = World::empty(s);
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, config.jitter * s).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let p = random_problem(&world, &mut rng, 0.0)?;
        let len = p.start.distance(p.goal);
        let n = ((len / (config.spacing * s)).ceil() as usize + 1).clamp(2, MAX_WAYPOINTS);
        let traj = (0..n)
            .map(|i| {
                let q = p.start.lerp(p.goal, i as f64 / (n - 1) as f64);
                let (dx, dy) = if config.jitter > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
                Config2D::new(snap((q.x + dx).clamp(0.0, s)), snap((q.y + dy).clamp(0.0, s)))
            })
            .collect();
        out.push(traj);
    }
    Ok(out)
}

/// One planning demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub world: World,
    pub start: Config2D,
    pub goal: Config2D,
    pub demo: Trajectory,
    /// Code labels; filled in from a Stage-1 model when available.
    pub labels: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2DataConfig {
    pub world: WorldConfig,
    pub trajs_per_env: usize,
    pub rrt_star_iterations: usize,
    /// Seconds; `None` disables the wall-clock budget (fully deterministic output).
    pub rrt_star_seconds: Option<f64>,
    pub delta: f64,
}

impl Default for Stage2DataConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            trajs_per_env: 5,
            rrt_star_iterations: 20_000,
            rrt_star_seconds: Some(5.0),
            delta: crate::env2d::DEFAULT_DELTA,
        }
    }
}

/// Seeds of environment `i` of a dataset with master seed `seed`.
fn env_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// Demonstrations for one environment; failed plans are skipped.
pub fn gen_environment(index: usize, seed: u64, config: &Stage2DataConfig) -> Result<Vec<Stage2Record>, PipelineError> {
    let wseed = env_seed(seed, index);
    let world = generate_world(wseed, &config.world)?;
    let mut rng = seeded_rng(wseed ^ 0x0005_DEEC_E66D);
    let goal_radius = DEFAULT_GOAL_RADIUS_FRACTION * world.side;
    let star = RrtStarConfig {
        max_iterations: config.rrt_star_iterations,
        max_time: config.rrt_star_seconds.map(std::time::Duration::from_secs_f64),
        delta: config.delta,
        ..RrtStarConfig::default()
    };
    let mut out = Vec::new();
    let attempts = 5 * config.trajs_per_env;
    for _ in 0..attempts {
        if out.len() == config.trajs_per_env {
            break;
        }
        let problem = match random_problem(&world, &mut rng, goal_radius) {
            Ok(p) => p,
            Err(e) => {
                warn!("environment {index}: {e}");
                break;
            }
        };
        let result = rrt_star_plan(&problem, &star, &mut rng)?;
        let Some(raw) = result.path else { continue };
        let passes = 2 * raw.len();
        let demo: Trajectory = simplify(&world, &raw, config.delta, &mut rng, passes)
            .into_iter()
            .map(|q| Config2D::new(snap(q.x), snap(q.y)))
            .collect();
        if demo.len() < 2 || !path_is_valid_exact(&world, &demo) {
            continue;
        }
        out.push(Stage2Record { world: world.clone(), start: problem.start, goal: problem.goal, demo, labels: None });
    }
    if out.is_empty() {
        warn!("environment {index} produced no demonstrations; skipped");
    }
    Ok(out)
}

/// Demonstrations over `env_count` random environments, in environment order.
/// Environments are independent, so callers may also run [`gen_environment`] in parallel
/// and concatenate the results by index.
pub fn gen_stage2_dataset(env_count: usize, seed: u64, config: &Stage2DataConfig) -> Result<Vec<Stage2Record>, PipelineError> {
    if env_count == 0 || config.trajs_per_env == 0 {
        return Err(PipelineError::Config("environment and trajectory counts must be at least 1".into()));
    }
    let mut out = Vec::new();
    for i in 0..env_count {
        out.extend(gen_environment(i, seed, config)?);
    }
    info!("generated {} demonstrations over {env_count} environments", out.len());
    Ok(out)
}

/// Costmap of a record's world at the default resolution.
pub fn record_costmap(record: &Stage2Record, resolution: Option<usize>) -> Result<Costmap, PipelineError> {
    Ok(render_costmap(&record.world, resolution.unwrap_or(DEFAULT_RESOLUTION))?)
}

/// Waypoint coverage of a `grid x grid` partition of the workspace.
pub fn coverage(trajs: &[Trajectory], side: f64, grid: usize) -> f64 {
    let mut hit = vec![false; grid * grid];
    for q in trajs.iter().flatten() {
        let cx = ((q.x / side * grid as f64) as usize).min(grid - 1);
        let cy = ((q.y / side * grid as f64) as usize).min(grid - 1);
        hit[cy * grid + cx] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / hit.len() as f64
}
