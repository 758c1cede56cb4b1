use log::info;
use rayon::prelude::*;
use serde_json::json;
use vqmpt::pipeline::{
    gen_environment, gen_stage1_dataset, save_dataset, Dataset, PipelineError, Stage1DataConfig, Stage2DataConfig,
};

use crate::error::CliError;
use crate::{thread_pool, GenDataArgs, Outcome};

pub(crate) fn run(a: &GenDataArgs) -> Result<Outcome, CliError> {
    if a.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let dataset = match a.stage {
        1 => {
            let cfg = Stage1DataConfig::default();
            let trajectories = gen_stage1_dataset(a.count, a.seed, &cfg)?;
            Dataset::Stage1 { trajectories, meta: json!({ "seed": a.seed, "config": cfg }) }
        }
        _ => {
            if a.trajs_per_env == 0 || a.rrt_star_iterations == 0 || !(a.rrt_star_seconds >= 0.0) {
                return Err(CliError::Config("trajectories per environment and RRT* budgets must be positive".into()));
            }
            let cfg = Stage2DataConfig {
                trajs_per_env: a.trajs_per_env,
                rrt_star_iterations: a.rrt_star_iterations,
                rrt_star_seconds: (a.rrt_star_seconds > 0.0).then_some(a.rrt_star_seconds),
                ..Stage2DataConfig::default()
            };
            // Environments are independent; collecting by index keeps the seed order.
            let per_env: Vec<_> = thread_pool()?
                .install(|| (0..a.count).into_par_iter().map(|i| gen_environment(i, a.seed, &cfg)).collect::<Result<Vec<_>, PipelineError>>())?;
            let records: Vec<_> = per_env.into_iter().flatten().collect();
            info!("{} demonstrations over {} environments", records.len(), a.count);
            Dataset::Stage2 { records, meta: json!({ "seed": a.seed, "environments": a.count, "config": cfg }) }
        }
    };
    save_dataset(&a.out, &dataset).map_err(|e| CliError::output(&a.out, e))?;
    Ok(Outcome::Success)
}
