use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Container, NamedArray, PipelineError, CHECKPOINT_MAGIC};
use crate::numerics::{ParamStore, Tensor};
use crate::stage1::{Codebook, Stage1Config, Stage1Model};
use crate::stage2::{Stage2Config, Stage2Model};

/// Trained models: always Stage 1 and its codebook, optionally Stage 2.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage1: Stage1Model,
    pub codebook: Codebook,
    pub stage2: Option<Stage2Model>,
    /// Free-form training metadata (seeds, epochs, data paths).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    stage1: Stage1Config,
    stage2: Option<Stage2Config>,
    #[serde(default)]
    meta: serde_json::Value,
}

const S1: &str = "stage1/";
const S2: &str = "stage2/";

fn push_store(arrays: &mut Vec<NamedArray>, prefix: &str, store: &ParamStore) -> Result<(), PipelineError> {
    for (name, t) in store.iter() {
        arrays.push(NamedArray::from_f64(format!("{prefix}{name}"), t.shape().to_vec(), t.data())?);
    }
    Ok(())
}

/// Rebuilds `expected`'s parameters from `prefix`-named arrays, checking names and shapes.
fn take_store(c: &Container, prefix: &str, expected: &ParamStore) -> Result<ParamStore, PipelineError> {
    let mut store = ParamStore::new();
    for (name, t) in expected.iter() {
        let full = format!("{prefix}{name}");
        let a = c.array(&full)?;
        if a.shape != t.shape() {
            return Err(PipelineError::ShapeMismatch { name: full, expected: t.shape().to_vec(), found: a.data.len() });
        }
        store.add(name, Tensor::new(a.shape.clone(), a.to_f64())?);
    }
    Ok(store)
}

fn tensor_of(c: &Container, name: &str, shape: &[usize]) -> Result<Tensor, PipelineError> {
    let a = c.array(name)?;
    if a.shape != shape {
        return Err(PipelineError::ShapeMismatch { name: name.to_string(), expected: shape.to_vec(), found: a.data.len() });
    }
    Ok(Tensor::new(a.shape.clone(), a.to_f64())?)
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container, PipelineError> {
        let header = Header {
            kind: if self.stage2.is_some() { "stage2" } else { "stage1" }.to_string(),
            stage1: self.stage1.config.clone(),
            stage2: self.stage2.as_ref().map(|m| m.config.clone()),
            meta: self.meta.clone(),
        };
        let mut arrays = Vec::new();
        push_store(&mut arrays, S1, &self.stage1.store)?;
        let cb = &self.codebook;
        arrays.push(NamedArray::from_f64("codebook/codes", cb.codes.shape().to_vec(), cb.codes.data())?);
        arrays.push(NamedArray::from_f64("codebook/start", cb.start.shape().to_vec(), cb.start.data())?);
        arrays.push(NamedArray::from_f64("codebook/goal", cb.goal.shape().to_vec(), cb.goal.data())?);
        if let Some(m) = &self.stage2 {
            push_store(&mut arrays, S2, &m.store)?;
        }
        let json = serde_json::to_value(&header).map_err(|e| PipelineError::Format(e.to_string()))?;
        Ok(Container { magic: CHECKPOINT_MAGIC, json, arrays })
    }

    pub fn from_container(c: &Container) -> Result<Self, PipelineError> {
        let header: Header = serde_json::from_value(c.json.clone()).map_err(|e| PipelineError::Format(format!("checkpoint header: {e}")))?;
        let cfg1 = header.stage1;
        let template = Stage1Model::new(cfg1.clone(), &mut crate::env2d::seeded_rng(0)).map_err(|e| PipelineError::Format(e.to_string()))?;
        let store = take_store(c, S1, &template.store)?;
        let stage1 = Stage1Model::from_store(cfg1.clone(), store)?;
        let codebook = Codebook {
            codes: tensor_of(c, "codebook/codes", &[cfg1.codes, cfg1.d_factor])?,
            start: tensor_of(c, "codebook/start", &[cfg1.d_model])?,
            goal: tensor_of(c, "codebook/goal", &[cfg1.d_model])?,
        };
        let stage2 = match header.stage2 {
            Some(cfg2) => {
                if cfg2.codes != cfg1.codes || cfg2.d_factor != cfg1.d_factor {
                    return Err(PipelineError::Format("stage-2 config does not match the codebook".into()));
                }
                let template = Stage2Model::new(cfg2.clone(), &mut crate::env2d::seeded_rng(0)).map_err(|e| PipelineError::Format(e.to_string()))?;
                let store = take_store(c, S2, &template.store)?;
                Some(Stage2Model::from_store(cfg2, store)?)
            }
            None => None,
        };
        let expected = stage1.store.len() + 3 + stage2.as_ref().map_or(0, |m| m.store.len());
        if c.arrays.len() != expected {
            return Err(PipelineError::Format(format!("expected {expected} arrays, found {}", c.arrays.len())));
        }
        Ok(Self { stage1, codebook, stage2, meta: header.meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        self.to_container()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        Self::from_container(&Container::read(bytes, CHECKPOINT_MAGIC)?)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    checkpoint.to_container()?.write(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    let input = BufReader::new(File::open(path)?);
    Checkpoint::from_container(&Container::read(input, CHECKPOINT_MAGIC)?)
}
