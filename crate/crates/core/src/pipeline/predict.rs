use std::time::Instant;

use log::warn;

use super::{Checkpoint, PipelineError, Stage2Record};
use crate::env2d::{render_costmap, Config2D, ProblemInstance, World};
use crate::numerics::NumericsError;
use crate::planners::{vqmpt_plan, PlannerResult, Sampler, UniformSampler, VqmptConfig};
use crate::stage1::{Codebook, Stage1Model};
use crate::stage2::{beam_search, build_gmm, ground_truth_indices, ContextScorer, Gmm, GmmSampler, Stage2Example, Stage2Model};

/// Attaches code labels to every record, then builds the supervised examples.
pub fn prepare_examples(
    stage1: &Stage1Model,
    codebook: &Codebook,
    stage2: &Stage2Model,
    records: &mut [Stage2Record],
) -> Result<Vec<Stage2Example>, PipelineError> {
    let mut out = Vec::with_capacity(records.len());
    let mut cached: Option<(World, crate::numerics::Tensor)> = None;
    for r in records.iter_mut() {
        let labels = ground_truth_indices(stage1, codebook, &r.demo, stage2.config.max_len)?;
        r.labels = Some(labels.clone());
        let patches = match &cached {
            Some((w, p)) if *w == r.world => p.clone(),
            _ => {
                let p = stage2.patches(&render_costmap(&r.world, stage2.config.resolution)?)?;
                cached = Some((r.world.clone(), p.clone()));
                p
            }
        };
        out.push(Stage2Example { patches, start: r.start, goal: r.goal, targets: labels });
    }
    Ok(out)
}

/// Beam-searched index sequence for one problem. The goal class ends the sequence.
pub fn predict_indices(
    stage2: &Stage2Model,
    codebook: &Codebook,
    world: &World,
    start: Config2D,
    goal: Config2D,
    beam_width: usize,
) -> Result<Vec<usize>, PipelineError> {
    let costmap = render_costmap(world, stage2.config.resolution)?;
    let context = stage2.context_value(&costmap, start, goal)?;
    let scorer = ContextScorer { model: stage2, codebook, context };
    Ok(beam_search(&scorer, beam_width, stage2.config.max_len)?.sequence)
}

/// Sampling mixture for one problem, or `None` when the prediction holds no codes.
pub fn predict_gmm(checkpoint: &Checkpoint, problem: &ProblemInstance, beam_width: usize) -> Result<(Vec<usize>, Option<Gmm>), PipelineError> {
    let stage2 = checkpoint.stage2.as_ref().ok_or_else(|| PipelineError::Config("checkpoint has no stage-2 model".into()))?;
    let seq = predict_indices(stage2, &checkpoint.codebook, &problem.world, problem.start, problem.goal, beam_width)?;
    match build_gmm(&checkpoint.stage1, &checkpoint.codebook, &seq) {
        Ok(g) => Ok((seq, Some(g))),
        Err(NumericsError::Domain(msg)) => {
            warn!("{msg}; falling back to uniform sampling");
            Ok((seq, None))
        }
        Err(e) => Err(e.into()),
    }
}

/// Outcome of a guided plan: the planner result and the predicted index sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedPlan {
    pub result: PlannerResult,
    pub indices: Vec<usize>,
    /// True when the prediction was empty and uniform sampling was used instead.
    pub fell_back: bool,
}

/// Costmap, context, beam search, mixture and the guided tree planner.
/// The reported wall time covers model inference as well as planning.
pub fn plan_guided<R: rand::Rng + ?Sized>(
    checkpoint: &Checkpoint,
    problem: &ProblemInstance,
    config: &VqmptConfig,
    beam_width: usize,
    sampler_seed: u64,
    rng: &mut R,
) -> Result<GuidedPlan, PipelineError> {
    let clock = Instant::now();
    let (indices, gmm) = predict_gmm(checkpoint, problem, beam_width)?;
    let fell_back = gmm.is_none();
    let mut sampler: Box<dyn Sampler> = match gmm {
        Some(g) => Box::new(GmmSampler::new(g, sampler_seed)),
        None => Box::new(UniformSampler::new(&problem.world, sampler_seed)),
    };
    let mut budget = config.clone();
    if let Some(t) = budget.max_time {
        budget.max_time = Some(t.saturating_sub(clock.elapsed()));
    }
    let mut result = vqmpt_plan(problem, sampler.as_mut(), &budget, rng)?;
    result.wall_time = clock.elapsed().as_secs_f64();
    Ok(GuidedPlan { result, indices, fell_back })
}
