use std::time::{Duration, Instant};

use rand::Rng;

use super::{connect, simplify, PlannerError, PlannerResult, Sampler, Tree};
use crate::env2d::ProblemInstance;

/// Settings of the sampling planner. `simplify_passes = None` uses twice the raw path length.
#[derive(Clone, Debug, PartialEq)]
pub struct VqmptConfig {
    pub iterations: usize,
    /// A goal connection is attempted when a uniform draw exceeds `goal_threshold`.
    pub goal_threshold: f64,
    pub delta: f64,
    pub simplify_passes: Option<usize>,
    pub max_time: Option<Duration>,
}

impl Default for VqmptConfig {
    fn default() -> Self {
        Self { iterations: 500, goal_threshold: 0.9, delta: crate::env2d::DEFAULT_DELTA, simplify_passes: None, max_time: None }
    }
}

/// Tree planner over an injected sampler.
///
/// Each iteration draws one sample, links it to its nearest tree node when the edge is free,
/// and with probability `1 − goal_threshold` tries to link the node nearest the goal to the goal.
/// Samples outside the workspace are dropped but still counted. A node that lands inside the
/// goal ball also ends the search. The found path is simplified once before returning.
pub fn vqmpt_plan<S, R>(
    problem: &ProblemInstance,
    sampler: &mut S,
    config: &VqmptConfig,
    rng: &mut R,
) -> Result<PlannerResult, PlannerError>
where
    S: Sampler + ?Sized,
    R: Rng + ?Sized,
{
    let clock = Instant::now();
    let world = &problem.world;
    if !world.is_state_valid(problem.start) {
        return Err(PlannerError::InvalidStart);
    }
    if !(0.0..=1.0).contains(&config.goal_threshold) || !(config.delta > 0.0) {
        return Err(PlannerError::Domain("goal threshold must be in [0, 1] and delta positive".into()));
    }
    let mut tree = Tree::new(problem.start);
    let mut samples = 0usize;
    let mut reached = None;
    for _ in 0..config.iterations {
        if config.max_time.is_some_and(|t| clock.elapsed() >= t) {
            break;
        }
        let q = sampler.draw();
        samples += 1;
        if q.is_finite() && world.in_bounds(q) {
            let near = tree.nearest(q);
            if connect(world, tree.node(near), q, config.delta) {
                let id = tree.add(q, near);
                if problem.in_goal(q) {
                    reached = Some(id);
                    break;
                }
            }
        }
        if rng.random::<f64>() > config.goal_threshold {
            let near = tree.nearest(problem.goal);
            if connect(world, tree.node(near), problem.goal, config.delta) {
                reached = Some(tree.add(problem.goal, near));
                break;
            }
        }
    }
    let path = reached.map(|id| {
        let mut raw = tree.path_to(id);
        let last = *raw.last().expect("non-empty path");
        if last != problem.goal && connect(world, last, problem.goal, config.delta) {
            raw.push(problem.goal);
        }
        let passes = config.simplify_passes.unwrap_or(2 * raw.len());
        simplify(world, &raw, config.delta, rng, passes)
    });
    Ok(PlannerResult {
        success: path.is_some(),
        path,
        vertices: tree.len(),
        samples_drawn: samples,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}
