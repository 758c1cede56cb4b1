use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Codebook, Stage1Model};
use crate::env2d::Config2D;
use crate::numerics::{adam_step, clip_global_norm, AdamState, Graph, LrSchedule, NumericsError, Tensor};

/// Optimization settings shared by both training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Multiplies the warmup schedule.
    pub lr_scale: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, warmup_steps: 400, lr_scale: 1.0, clip_norm: 1.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.batch_size == 0 || self.warmup_steps == 0 || !(self.lr_scale > 0.0) || !(self.clip_norm > 0.0) {
            return Err(NumericsError::Config("batch size, warmup, lr scale and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Fraction of codes selected so far in the current epoch (Stage 1 only).
    pub code_usage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Stage 1: fraction of codes used. Stage 2: unused.
    pub code_usage: Option<f64>,
    /// Stage 1: held-out mean NLL per waypoint. Stage 2: held-out next-index top-1 accuracy.
    pub held_out: Option<f64>,
    pub reseeded: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Minibatch Adam on the VQ objective.
///
/// Gradients are accumulated per trajectory and averaged over the batch; the codebook has its
/// own Adam state but is clipped jointly with the network. Codes are renormalized after every
/// step and codes unused for a whole epoch are reseeded from encoder outputs of the last batch.
pub fn train_stage1<R: Rng + ?Sized>(
    model: &mut Stage1Model,
    codebook: &mut Codebook,
    train: &[Vec<Config2D>],
    held_out: &[Vec<Config2D>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainLog, NumericsError> {
    config.validate()?;
    if train.is_empty() && config.epochs > 0 {
        return Err(NumericsError::Domain("empty training set".into()));
    }
    let schedule = LrSchedule::new(model.config.d_model, config.warmup_steps)?;
    let mut adam = AdamState::new(model.store.values());
    let mut code_adam = AdamState::new(std::slice::from_ref(&codebook.codes));
    let n_codes = codebook.size();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut used = vec![false; n_codes];
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut last_outputs: Vec<Vec<f64>> = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let entropy = entropy_draws(model, rng)?;
            let mut grads: Vec<Tensor> = model.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut code_grad = Tensor::zeros(codebook.codes.shape());
            let mut batch_loss = 0.0;
            last_outputs.clear();
            for &i in batch {
                let mut g = Graph::new();
                let p = model.store.bind(&mut g, true);
                let codes = g.param(codebook.codes.clone());
                let terms = model.vq_terms(&mut g, &p, codebook, codes, &train[i], entropy.as_ref())?;
                let loss = g.scalar(terms.total);
                if !loss.is_finite() {
                    return Err(NumericsError::Domain(format!("non-finite stage-1 loss at epoch {epoch}, step {step}")));
                }
                batch_loss += loss;
                for &k in &terms.indices {
                    used[k] = true;
                }
                let z = g.value(terms.normalized);
                last_outputs.extend((0..z.rows()).map(|r| z.row(r).to_vec()));
                let back = g.backward(terms.total)?;
                for (acc, gr) in grads.iter_mut().zip(p.collect(&back, &model.store)) {
                    acc.add_assign(&gr);
                }
                if let Some(cg) = back.get(codes) {
                    code_grad.add_assign(cg);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().chain(std::iter::once(&mut code_grad)).for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
            let mut all: Vec<Tensor> = grads;
            all.push(code_grad);
            clip_global_norm(&mut all, config.clip_norm);
            let code_grad = all.pop().expect("code gradient");
            step += 1;
            let lr = schedule.lr_at(step)? * config.lr_scale;
            adam_step(model.store.values_mut(), &all, &mut adam, lr)?;
            model.store.quantize_f32();
            adam_step(std::slice::from_mut(&mut codebook.codes), &[code_grad], &mut code_adam, lr)?;
            codebook.renormalize();
            let mean = batch_loss * inv;
            loss_sum += mean;
            batches += 1;
            let usage = used.iter().filter(|&&u| u).count() as f64 / n_codes as f64;
            log.steps.push(StepRecord { epoch, step, loss: mean, lr, code_usage: Some(usage) });
        }
        let usage = used.iter().filter(|&&u| u).count() as f64 / n_codes as f64;
        let mut reseeded = 0;
        for (k, u) in used.iter().enumerate() {
            if !u && !last_outputs.is_empty() {
                let pick = &last_outputs[rng.random_range(0..last_outputs.len())];
                codebook.set_code(k, pick);
                reseeded += 1;
            }
        }
        codebook.renormalize();
        if reseeded > 0 {
            warn!("epoch {epoch}: reseeded {reseeded} unused codes");
        }
        let held = if held_out.is_empty() { None } else { Some(model.mean_nll(codebook, held_out)?) };
        let mean_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        info!("stage1 epoch {epoch}: loss {mean_loss:.4}, code usage {usage:.3}, held-out nll {held:?}");
        log.epochs.push(EpochRecord { epoch, mean_loss, code_usage: Some(usage), held_out: held, reseeded });
    }
    Ok(log)
}

/// Uniform workspace draws in normalized coordinates, shared by a batch.
fn entropy_draws<R: Rng + ?Sized>(model: &Stage1Model, rng: &mut R) -> Result<Option<Tensor>, NumericsError> {
    let m = model.config.entropy_samples;
    if model.config.lambda == 0.0 || m == 0 {
        return Ok(None);
    }
    let data = (0..2 * m).map(|_| rng.random::<f64>()).collect();
    Tensor::new(vec![m, 2], data).map(Some)
}
