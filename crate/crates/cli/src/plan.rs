use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use vqmpt::env2d::{
    generate_world, render_costmap, seeded_rng, Config2D, ProblemInstance, World, WorldConfig, DEFAULT_GOAL_RADIUS_FRACTION,
    DEFAULT_RESOLUTION,
};
use vqmpt::pipeline::{load_checkpoint, plan_guided, Checkpoint};
use vqmpt::planners::{
    path_is_valid_exact, path_length, rrt_star_plan, vqmpt_plan, write_path_csv, PlannerResult, RrtStarConfig, UniformSampler,
    VqmptConfig,
};

use crate::error::{create_dir, write_file, CliError};
use crate::svg::world_svg;
use crate::{Outcome, PlanArgs, PlannerName};

/// Budgets shared by `plan` and `eval`.
#[derive(Clone, Debug)]
pub(crate) struct PlanSettings {
    pub k: usize,
    pub b: f64,
    pub beam: usize,
    pub cutoff: f64,
    pub rrt_star_iterations: Option<usize>,
}

impl PlanSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.b) {
            return Err(CliError::Config("--b must be in [0, 1]".into()));
        }
        if self.beam == 0 {
            return Err(CliError::Config("--beam must be at least 1".into()));
        }
        if !(self.cutoff >= 0.0) || !self.cutoff.is_finite() {
            return Err(CliError::Config("--cutoff must be a finite, nonnegative number of seconds".into()));
        }
        Ok(())
    }

    fn vqmpt(&self) -> VqmptConfig {
        VqmptConfig { iterations: self.k, goal_threshold: self.b, max_time: Some(Duration::from_secs_f64(self.cutoff)), ..VqmptConfig::default() }
    }
}

/// One planner call; `fell_back` marks guided runs that used uniform sampling.
#[derive(Clone, Debug)]
pub(crate) struct PlanRun {
    pub result: PlannerResult,
    pub indices: Option<Vec<usize>>,
    pub fell_back: bool,
}

/// Runs `planner` on `problem`; `target_cost` ends rrt-star early once a short enough path exists.
pub(crate) fn run_planner(
    planner: PlannerName,
    checkpoint: Option<&Checkpoint>,
    problem: &ProblemInstance,
    settings: &PlanSettings,
    target_cost: Option<f64>,
    seed: u64,
) -> Result<PlanRun, CliError> {
    let mut rng = seeded_rng(seed ^ 0xA5A5_5A5A);
    let planner_err = |e: vqmpt::planners::PlannerError| CliError::Config(e.to_string());
    match planner {
        PlannerName::Vqmpt => {
            let ck = checkpoint.ok_or_else(|| CliError::Config("the vqmpt planner needs --model".into()))?;
            let g = plan_guided(ck, problem, &settings.vqmpt(), settings.beam, seed, &mut rng)?;
            Ok(PlanRun { result: g.result, indices: Some(g.indices), fell_back: g.fell_back })
        }
        PlannerName::Rrt => {
            let mut sampler = UniformSampler::new(&problem.world, seed);
            let result = vqmpt_plan(problem, &mut sampler, &settings.vqmpt(), &mut rng).map_err(planner_err)?;
            Ok(PlanRun { result, indices: None, fell_back: false })
        }
        PlannerName::RrtStar => {
            let cfg = RrtStarConfig {
                max_iterations: settings.rrt_star_iterations.unwrap_or(usize::MAX),
                max_time: Some(Duration::from_secs_f64(settings.cutoff)),
                target_cost,
                ..RrtStarConfig::default()
            };
            let result = rrt_star_plan(problem, &cfg, &mut rng).map_err(planner_err)?;
            Ok(PlanRun { result, indices: None, fell_back: false })
        }
    }
}

pub(crate) fn load_model(path: Option<&Path>) -> Result<Option<Checkpoint>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let ck = load_checkpoint(path).map_err(|e| CliError::input(path, e))?;
    if ck.stage2.is_none() {
        return Err(CliError::input(path, "checkpoint has no stage-2 model"));
    }
    Ok(Some(ck))
}

#[derive(Serialize)]
struct PlanRecord<'a> {
    planner: &'a str,
    world_seed: Option<u64>,
    start: [f64; 2],
    goal: [f64; 2],
    success: bool,
    vertices: usize,
    samples_drawn: usize,
    wall_time: f64,
    path_length: Option<f64>,
    path_valid: Option<bool>,
    indices: Option<&'a [usize]>,
    fell_back: bool,
}

pub(crate) fn run(a: &PlanArgs) -> Result<Outcome, CliError> {
    let settings = PlanSettings { k: a.k, b: a.b, beam: a.beam, cutoff: a.cutoff, rrt_star_iterations: Some(RrtStarConfig::default().max_iterations) };
    settings.validate()?;
    let checkpoint = load_model(a.model.as_deref())?;
    if a.planner == PlannerName::Vqmpt && checkpoint.is_none() {
        return Err(CliError::Config("the vqmpt planner needs --model".into()));
    }
    let world = if a.empty {
        World::empty(1.0)
    } else {
        generate_world(a.world_seed, &WorldConfig::default()).map_err(|e| CliError::Config(e.to_string()))?
    };
    let start = Config2D::new(a.start[0], a.start[1]);
    let goal = Config2D::new(a.goal[0], a.goal[1]);
    let problem = ProblemInstance::new(world, start, goal, DEFAULT_GOAL_RADIUS_FRACTION * 1.0)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let run = run_planner(a.planner, checkpoint.as_ref(), &problem, &settings, None, a.seed)?;

    create_dir(&a.out)?;
    let path = run.result.path.as_deref();
    if let Some(p) = path {
        let file = a.out.join("path.csv");
        let f = File::create(&file).map_err(|e| CliError::output(&file, e))?;
        let mut w = BufWriter::new(f);
        write_path_csv(p, &mut w).and_then(|_| w.flush()).map_err(|e| CliError::output(&file, e))?;
    }
    let record = PlanRecord {
        planner: a.planner.as_str(),
        world_seed: (!a.empty).then_some(a.world_seed),
        start: a.start,
        goal: a.goal,
        success: run.result.success,
        vertices: run.result.vertices,
        samples_drawn: run.result.samples_drawn,
        wall_time: run.result.wall_time,
        path_length: path.map(path_length),
        path_valid: path.map(|p| path_is_valid_exact(&problem.world, p)),
        indices: run.indices.as_deref(),
        fell_back: run.fell_back,
    };
    let json = serde_json::to_vec_pretty(&record).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&a.out.join("result.json"), &json)?;
    write_file(&a.out.join("world.svg"), world_svg(&problem.world, start, goal, path).as_bytes())?;
    let costmap = render_costmap(&problem.world, DEFAULT_RESOLUTION).map_err(|e| CliError::Config(e.to_string()))?;
    let mut pgm = Vec::new();
    costmap.write_pgm(&mut pgm).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&a.out.join("costmap.pgm"), &pgm)?;
    Ok(if run.result.success { Outcome::Success } else { Outcome::PlanningFailed })
}
