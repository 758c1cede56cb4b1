use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vqmpt::env2d::{seeded_rng, ProblemInstance, DEFAULT_GOAL_RADIUS_FRACTION};
use vqmpt::pipeline::{load_dataset, Checkpoint, Dataset};
use vqmpt::planners::{path_length, rrt_star_plan, termination_met, RrtStarConfig, Trajectory};

use crate::error::{create_dir, write_file, CliError};
use crate::plan::{load_model, run_planner, PlanRun, PlanSettings};
use crate::svg::success_curve_svg;
use crate::{thread_pool, EvalArgs, Outcome, PlannerName};

pub const EVAL_CSV_VERSION: u32 = 1;

/// One planner on one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub problem: usize,
    pub planner: String,
    pub success: bool,
    /// Seconds, model inference included for vqmpt.
    pub time: f64,
    pub vertices: usize,
    /// Present only for successful rows.
    pub path_length: Option<f64>,
    pub samples_drawn: usize,
}

/// Per-planner reductions. Times and vertices average over successful rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub planner: String,
    pub problems: usize,
    pub successes: usize,
    /// Percent of problems solved within the cutoff.
    pub success_rate: f64,
    pub mean_time: Option<f64>,
    pub median_time: Option<f64>,
    pub mean_vertices: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub epsilon: f64,
    pub cutoff: f64,
    pub problems: usize,
    pub planners: Vec<PlannerSummary>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Reduces rows to one summary per planner name, in first-appearance order.
pub fn aggregate(rows: &[EvalRow], epsilon: f64, cutoff: f64) -> Aggregate {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.planner.as_str()) {
            names.push(&r.planner);
        }
    }
    let planners = names
        .iter()
        .map(|&name| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.planner == name).collect();
            let ok: Vec<&EvalRow> = mine.iter().copied().filter(|r| r.success).collect();
            let mean = |f: &dyn Fn(&EvalRow) -> f64| (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64);
            PlannerSummary {
                planner: name.to_string(),
                problems: mine.len(),
                successes: ok.len(),
                success_rate: if mine.is_empty() { 0.0 } else { 100.0 * ok.len() as f64 / mine.len() as f64 },
                mean_time: mean(&|r| r.time),
                median_time: median(ok.iter().map(|r| r.time).collect()),
                mean_vertices: mean(&|r| r.vertices as f64),
            }
        })
        .collect();
    let problems = rows.iter().map(|r| r.problem + 1).max().unwrap_or(0);
    Aggregate { epsilon, cutoff, problems, planners }
}

fn problem_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

fn failure_row(problem: usize, planner: PlannerName) -> EvalRow {
    EvalRow { problem, planner: planner.as_str().into(), success: false, time: 0.0, vertices: 0, path_length: None, samples_drawn: 0 }
}

fn row_from(problem: usize, planner: PlannerName, run: &PlanRun, success: bool) -> EvalRow {
    let path = run.result.path.as_deref().filter(|_| success);
    EvalRow {
        problem,
        planner: planner.as_str().into(),
        success,
        time: run.result.wall_time,
        vertices: run.result.vertices,
        path_length: path.map(path_length),
        samples_drawn: run.result.samples_drawn,
    }
}

/// Reference path for the stop rule: the guided plan, else a long RRT* run.
fn reference_path(
    a: &EvalArgs,
    checkpoint: Option<&Checkpoint>,
    problem: &ProblemInstance,
    settings: &PlanSettings,
    guided: Option<&PlanRun>,
    seed: u64,
) -> Option<Trajectory> {
    if let Some(p) = guided.and_then(|g| g.result.path.clone()) {
        return Some(p);
    }
    if guided.is_none() {
        if let Ok(g) = run_planner(PlannerName::Vqmpt, checkpoint, problem, settings, None, seed) {
            if let Some(p) = g.result.path {
                return Some(p);
            }
        }
    }
    let cfg = RrtStarConfig {
        max_iterations: a.reference_iterations.unwrap_or(usize::MAX),
        max_time: Some(Duration::from_secs_f64(a.reference_seconds)),
        ..RrtStarConfig::default()
    };
    rrt_star_plan(problem, &cfg, &mut seeded_rng(seed ^ 0x0EF0_0EF0)).ok().and_then(|r| r.path)
}

fn eval_problem(
    a: &EvalArgs,
    checkpoint: Option<&Checkpoint>,
    settings: &PlanSettings,
    index: usize,
    problem: &ProblemInstance,
) -> Vec<EvalRow> {
    let seed = problem_seed(a.seed, index);
    let mut guided: Option<PlanRun> = None;
    let mut rows = Vec::with_capacity(a.planners.len());
    // The reference must exist before rrt-star runs, so vqmpt goes first.
    let mut order = a.planners.clone();
    order.sort_by_key(|p| *p != PlannerName::Vqmpt);
    let mut by_planner = Vec::new();
    for &planner in &order {
        if planner == PlannerName::RrtStar {
            let reference = reference_path(a, checkpoint, problem, settings, guided.as_ref(), seed);
            let target = reference.as_ref().map(|r| (1.0 + a.epsilon) * path_length(r));
            let row = match run_planner(planner, checkpoint, problem, settings, target, seed) {
                Ok(run) => {
                    let met = match (&run.result.path, &reference) {
                        (Some(p), Some(r)) => termination_met(p, r, a.epsilon).unwrap_or(false),
                        (Some(_), None) => true,
                        _ => false,
                    };
                    row_from(index, planner, &run, met)
                }
                Err(e) => {
                    warn!("problem {index}, {}: {e}", planner.as_str());
                    failure_row(index, planner)
                }
            };
            by_planner.push((planner, row));
            continue;
        }
        let row = match run_planner(planner, checkpoint, problem, settings, None, seed) {
            Ok(run) => {
                let row = row_from(index, planner, &run, run.result.success);
                if planner == PlannerName::Vqmpt {
                    guided = Some(run);
                }
                row
            }
            Err(e) => {
                warn!("problem {index}, {}: {e}", planner.as_str());
                failure_row(index, planner)
            }
        };
        by_planner.push((planner, row));
    }
    for p in &a.planners {
        if let Some(i) = by_planner.iter().position(|(q, _)| q == p) {
            rows.push(by_planner.swap_remove(i).1);
        }
    }
    rows
}

fn write_rows(path: &Path, rows: &[EvalRow], a: &EvalArgs) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::output(path, e);
    writeln!(out, "# vqmpt eval v{EVAL_CSV_VERSION} epsilon={} cutoff={}", a.epsilon, a.cutoff).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::output(path, e);
    w.write_record(["problem", "planner", "success", "time", "vertices", "path_length", "samples_drawn"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.problem.to_string(),
            r.planner.clone(),
            r.success.to_string(),
            r.time.to_string(),
            r.vertices.to_string(),
            r.path_length.map(|l| l.to_string()).unwrap_or_default(),
            r.samples_drawn.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub(crate) fn run(a: &EvalArgs) -> Result<Outcome, CliError> {
    if !(a.epsilon >= 0.0) {
        return Err(CliError::Config("--epsilon must be nonnegative".into()));
    }
    if a.planners.is_empty() {
        return Err(CliError::Config("--planners must name at least one planner".into()));
    }
    if !(a.reference_seconds >= 0.0) || !a.reference_seconds.is_finite() {
        return Err(CliError::Config("--reference-seconds must be a finite, nonnegative number".into()));
    }
    let settings = PlanSettings { k: a.k, b: a.b, beam: a.beam, cutoff: a.cutoff, rrt_star_iterations: a.rrt_star_iterations };
    settings.validate()?;
    if a.planners.contains(&PlannerName::Vqmpt) && a.model.is_none() {
        return Err(CliError::Config("the vqmpt planner needs --model".into()));
    }
    let checkpoint = load_model(a.model.as_deref())?;
    let problems: Vec<ProblemInstance> = match load_dataset(&a.problems).map_err(|e| CliError::input(&a.problems, e))? {
        Dataset::Stage2 { records, .. } => records
            .into_iter()
            .take(a.limit.unwrap_or(usize::MAX))
            .map(|r| {
                let radius = DEFAULT_GOAL_RADIUS_FRACTION * r.world.side;
                ProblemInstance::new(r.world, r.start, r.goal, radius)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input(&a.problems, e))?,
        Dataset::Stage1 { .. } => return Err(CliError::input(&a.problems, "expected a stage-2 dataset of problems")),
    };
    if problems.is_empty() {
        return Err(CliError::input(&a.problems, "no problems to evaluate"));
    }
    info!("evaluating {} problems with {:?}", problems.len(), a.planners);
    let per_problem: Vec<Vec<EvalRow>> = thread_pool()?.install(|| {
        problems.par_iter().enumerate().map(|(i, p)| eval_problem(a, checkpoint.as_ref(), &settings, i, p)).collect()
    });
    let rows: Vec<EvalRow> = per_problem.into_iter().flatten().collect();

    create_dir(&a.out_dir)?;
    write_rows(&a.out_dir.join("eval.csv"), &rows, a)?;
    let agg = aggregate(&rows, a.epsilon, a.cutoff);
    let json = serde_json::to_vec_pretty(&agg).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&a.out_dir.join("aggregate.json"), &json)?;
    let series: Vec<(String, Vec<f64>)> = a
        .planners
        .iter()
        .map(|p| (p.as_str().to_string(), rows.iter().filter(|r| r.planner == p.as_str() && r.success).map(|r| r.time).collect()))
        .collect();
    write_file(&a.out_dir.join("success_vs_time.svg"), success_curve_svg(&series, problems.len(), a.cutoff).as_bytes())?;
    for s in &agg.planners {
        info!("{}: {:.1}% solved, mean vertices {:?}", s.planner, s.success_rate, s.mean_vertices);
    }
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(problem: usize, planner: &str, success: bool, time: f64, vertices: usize) -> EvalRow {
        EvalRow { problem, planner: planner.into(), success, time, vertices, path_length: success.then_some(1.0), samples_drawn: vertices }
    }

    #[test]
    fn aggregate_reduces_successes_only() {
        let rows = vec![row(0, "a", true, 1.0, 10), row(1, "a", false, 5.0, 99), row(2, "a", true, 3.0, 20), row(0, "b", false, 0.0, 1)];
        let agg = aggregate(&rows, 0.1, 20.0);
        assert_eq!(agg.problems, 3);
        let a = &agg.planners[0];
        assert_eq!((a.problems, a.successes), (3, 2));
        assert!((a.success_rate - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.mean_time, Some(2.0));
        assert_eq!(a.median_time, Some(2.0));
        assert_eq!(a.mean_vertices, Some(15.0));
        assert_eq!(agg.planners[1].mean_time, None);
    }
}
