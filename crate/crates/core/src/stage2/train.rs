use log::info;
use rand::seq::SliceRandom;
use rand::Rng;

use super::Stage2Model;
use crate::env2d::Config2D;
use crate::numerics::{adam_step, clip_global_norm, AdamState, Graph, LrSchedule, NumericsError, Tensor};
use crate::stage1::{Codebook, EpochRecord, StepRecord, TrainConfig, TrainLog};

/// One supervised problem: costmap patches, endpoints and the target index sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Example {
    pub patches: Tensor,
    pub start: Config2D,
    pub goal: Config2D,
    pub targets: Vec<usize>,
}

/// Teacher-forced loss and the number of correctly predicted next indices for one example.
fn example_loss(
    model: &Stage2Model,
    codebook: &Codebook,
    ex: &Stage2Example,
    trainable: bool,
) -> Result<(Graph, crate::numerics::Bound, crate::numerics::Var, usize), NumericsError> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, trainable);
    let m = model.context(&mut g, &p, &ex.patches, ex.start, ex.goal)?;
    let (loss, logits) = model.ce_loss(&mut g, &p, codebook, m, &ex.targets)?;
    let lv = g.value(logits);
    let correct = (0..lv.rows()).filter(|&r| argmax(lv.row(r)) == ex.targets[r]).count();
    Ok((g, p, loss, correct))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Held-out top-1 accuracy of next-index prediction under teacher forcing.
pub fn next_index_accuracy(model: &Stage2Model, codebook: &Codebook, examples: &[Stage2Example]) -> Result<f64, NumericsError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let (_, _, _, c) = example_loss(model, codebook, ex, false)?;
        correct += c;
        total += ex.targets.len();
    }
    if total == 0 {
        return Err(NumericsError::Domain("no targets to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Adam with the warmup schedule on the summed sequence cross-entropy, averaged per batch.
/// The Stage-1 model and codebook are only read.
pub fn train_stage2<R: Rng + ?Sized>(
    model: &mut Stage2Model,
    codebook: &Codebook,
    train: &[Stage2Example],
    held_out: &[Stage2Example],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainLog, NumericsError> {
    config.validate()?;
    if train.is_empty() && config.epochs > 0 {
        return Err(NumericsError::Domain("empty training set".into()));
    }
    let schedule = LrSchedule::new(model.config.d_model, config.warmup_steps)?;
    let mut adam = AdamState::new(model.store.values());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Tensor> = model.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (g, p, loss, _) = example_loss(model, codebook, &train[i], true)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(NumericsError::Domain(format!("non-finite stage-2 loss at epoch {epoch}, step {step}")));
                }
                batch_loss += value;
                let back = g.backward(loss)?;
                for (acc, gr) in grads.iter_mut().zip(p.collect(&back, &model.store)) {
                    acc.add_assign(&gr);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
            clip_global_norm(&mut grads, config.clip_norm);
            step += 1;
            let lr = schedule.lr_at(step)? * config.lr_scale;
            adam_step(model.store.values_mut(), &grads, &mut adam, lr)?;
            model.store.quantize_f32();
            let mean = batch_loss * inv;
            loss_sum += mean;
            batches += 1;
            log.steps.push(StepRecord { epoch, step, loss: mean, lr, code_usage: None });
        }
        let held = if held_out.is_empty() { None } else { Some(next_index_accuracy(model, codebook, held_out)?) };
        let mean_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        info!("stage2 epoch {epoch}: loss {mean_loss:.4}, held-out accuracy {held:?}");
        log.epochs.push(EpochRecord { epoch, mean_loss, code_usage: None, held_out: held, reseeded: 0 });
    }
    Ok(log)
}
