use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;
use vqmpt::env2d::seeded_rng;
use vqmpt::pipeline::{load_checkpoint, load_dataset, prepare_examples, save_checkpoint, Checkpoint, Dataset};
use vqmpt::stage1::{train_stage1, Codebook, Stage1Config, Stage1Model, TrainConfig, TrainLog};
use vqmpt::stage2::{train_stage2, Stage2Config, Stage2Model};

use crate::error::CliError;
use crate::{Outcome, TrainArgs};

pub const TRAIN_CSV_VERSION: u32 = 1;

fn split_point(n: usize, fraction: f64) -> Result<usize, CliError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CliError::Config("--held-out-fraction must be in [0, 1)".into()));
    }
    let held = ((n as f64) * fraction).round() as usize;
    Ok(n - held.min(n.saturating_sub(1)))
}

fn log_path(a: &TrainArgs) -> PathBuf {
    a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".csv");
        p.into()
    })
}

/// Step-level loss log with a versioned comment header.
pub(crate) fn write_log(path: &Path, stage: u8, log: &TrainLog) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::output(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| CliError::output(path, e);
    writeln!(out, "# vqmpt train log v{TRAIN_CSV_VERSION} stage={stage}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::output(path, e);
    w.write_record(["epoch", "step", "loss", "lr", "code_usage"]).map_err(csv_err)?;
    for s in &log.steps {
        let usage = s.code_usage.map(|u| u.to_string()).unwrap_or_default();
        w.write_record([s.epoch.to_string(), s.step.to_string(), s.loss.to_string(), s.lr.to_string(), usage])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        warmup_steps: a.warmup_steps,
        lr_scale: a.lr_scale,
        clip_norm: a.clip_norm,
        seed: a.seed,
    }
}

fn epoch_summary(log: &TrainLog) -> serde_json::Value {
    serde_json::to_value(&log.epochs).unwrap_or(serde_json::Value::Null)
}

pub(crate) fn run(a: &TrainArgs) -> Result<Outcome, CliError> {
    let data = load_dataset(&a.data).map_err(|e| CliError::input(&a.data, e))?;
    let tc = train_config(a);
    tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = seeded_rng(a.seed);
    let (checkpoint, log) = match (a.stage, data) {
        (1, Dataset::Stage1 { trajectories, .. }) => {
            let cfg = Stage1Config {
                d_model: a.d_model,
                codes: a.codes,
                d_factor: a.d_factor,
                layers: a.layers,
                beta: a.beta,
                lambda: a.lambda,
                ..Stage1Config::default()
            };
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let mut model = Stage1Model::new(cfg.clone(), &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
            let mut codebook =
                Codebook::random(cfg.codes, cfg.d_factor, cfg.d_model, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
            let split = split_point(trajectories.len(), a.held_out_fraction)?;
            let (train, held) = trajectories.split_at(split);
            let log = train_stage1(&mut model, &mut codebook, train, held, &tc, &mut rng)
                .map_err(|e| CliError::Config(format!("stage-1 training failed: {e}")))?;
            let meta = json!({ "stage": 1, "seed": a.seed, "train": tc, "epochs": epoch_summary(&log) });
            (Checkpoint { stage1: model, codebook, stage2: None, meta }, log)
        }
        (2, Dataset::Stage2 { mut records, .. }) => {
            let path = a.model.as_ref().ok_or_else(|| CliError::Config("stage 2 needs --model with a stage-1 checkpoint".into()))?;
            let base = load_checkpoint(path).map_err(|e| CliError::input(path, e))?;
            let s1 = &base.stage1.config;
            let cfg = Stage2Config { d_model: a.d_model, codes: s1.codes, d_factor: s1.d_factor, max_len: a.max_len, ..Stage2Config::default() };
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let mut model = Stage2Model::new(cfg, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
            let examples = prepare_examples(&base.stage1, &base.codebook, &model, &mut records)
                .map_err(|e| CliError::Config(format!("checkpoint and dataset are incompatible: {e}")))?;
            let split = split_point(examples.len(), a.held_out_fraction)?;
            let (train, held) = examples.split_at(split);
            let log = train_stage2(&mut model, &base.codebook, train, held, &tc, &mut rng)
                .map_err(|e| CliError::Config(format!("stage-2 training failed: {e}")))?;
            let meta = json!({ "stage": 2, "seed": a.seed, "train": tc, "epochs": epoch_summary(&log), "stage1": base.meta });
            (Checkpoint { stage2: Some(model), meta, ..base }, log)
        }
        (stage, _) => return Err(CliError::Config(format!("{} does not hold a stage-{stage} dataset", a.data.display()))),
    };
    save_checkpoint(&a.out, &checkpoint).map_err(|e| CliError::output(&a.out, e))?;
    write_log(&log_path(a), a.stage, &log)?;
    if let Some(last) = log.epochs.last() {
        info!("final epoch {}: loss {:.4}, held-out {:?}", last.epoch, last.mean_loss, last.held_out);
    }
    Ok(Outcome::Success)
}
