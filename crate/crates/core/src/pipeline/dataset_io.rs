use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Container, NamedArray, PipelineError, Stage2Record, DATASET_MAGIC};
use crate::env2d::{render_costmap, Config2D, World, DEFAULT_RESOLUTION};
use crate::planners::Trajectory;

/// A dataset file: either obstacle-free trajectories or planning demonstrations.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Stage1 { trajectories: Vec<Trajectory>, meta: serde_json::Value },
    Stage2 { records: Vec<Stage2Record>, meta: serde_json::Value },
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    world: usize,
    start: Config2D,
    goal: Config2D,
    waypoints: usize,
    labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Stage1 { lengths: Vec<usize>, meta: serde_json::Value },
    Stage2 { worlds: Vec<World>, records: Vec<RecordHeader>, resolution: usize, meta: serde_json::Value },
}

fn flatten(trajs: impl Iterator<Item = impl AsRef<[Config2D]>>) -> Vec<f64> {
    trajs.flat_map(|t| t.as_ref().iter().flat_map(|q| [q.x, q.y]).collect::<Vec<_>>()).collect()
}

fn split(data: &[f32], lengths: &[usize]) -> Result<Vec<Trajectory>, PipelineError> {
    let total: usize = lengths.iter().sum();
    if total * 2 != data.len() {
        return Err(PipelineError::ShapeMismatch { name: "waypoints".into(), expected: vec![total, 2], found: data.len() });
    }
    let mut out = Vec::with_capacity(lengths.len());
    let mut at = 0;
    for &n in lengths {
        out.push((0..n).map(|i| Config2D::new(data[2 * (at + i)] as f64, data[2 * (at + i) + 1] as f64)).collect());
        at += n;
    }
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Stage1 { trajectories, .. } => trajectories.len(),
            Dataset::Stage2 { records, .. } => records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_container(&self) -> Result<Container, PipelineError> {
        let fmt = |e: serde_json::Error| PipelineError::Format(e.to_string());
        match self {
            Dataset::Stage1 { trajectories, meta } => {
                let lengths: Vec<usize> = trajectories.iter().map(Vec::len).collect();
                let total: usize = lengths.iter().sum();
                let arrays = vec![NamedArray::from_f64("waypoints", vec![total, 2], &flatten(trajectories.iter()))?];
                let json = serde_json::to_value(Header::Stage1 { lengths, meta: meta.clone() }).map_err(fmt)?;
                Ok(Container { magic: DATASET_MAGIC, json, arrays })
            }
            Dataset::Stage2 { records, meta } => {
                let mut worlds: Vec<World> = Vec::new();
                let mut headers = Vec::with_capacity(records.len());
                for r in records {
                    let w = match worlds.iter().position(|w| *w == r.world) {
                        Some(i) => i,
                        None => {
                            worlds.push(r.world.clone());
                            worlds.len() - 1
                        }
                    };
                    headers.push(RecordHeader { world: w, start: r.start, goal: r.goal, waypoints: r.demo.len(), labels: r.labels.clone() });
                }
                let res = DEFAULT_RESOLUTION;
                let mut cells = Vec::with_capacity(worlds.len() * res * res);
                for w in &worlds {
                    cells.extend(render_costmap(w, res)?.cells.iter().map(|&c| c as f64));
                }
                let total: usize = records.iter().map(|r| r.demo.len()).sum();
                let arrays = vec![
                    NamedArray::from_f64("demos", vec![total, 2], &flatten(records.iter().map(|r| &r.demo)))?,
                    NamedArray::from_f64("costmaps", vec![worlds.len(), res, res], &cells)?,
                ];
                let json = serde_json::to_value(Header::Stage2 { worlds, records: headers, resolution: res, meta: meta.clone() }).map_err(fmt)?;
                Ok(Container { magic: DATASET_MAGIC, json, arrays })
            }
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, PipelineError> {
        let header: Header = serde_json::from_value(c.json.clone()).map_err(|e| PipelineError::Format(format!("dataset header: {e}")))?;
        match header {
            Header::Stage1 { lengths, meta } => {
                let trajectories = split(&c.array("waypoints")?.data, &lengths)?;
                Ok(Dataset::Stage1 { trajectories, meta })
            }
            Header::Stage2 { worlds, records, resolution, meta } => {
                let lengths: Vec<usize> = records.iter().map(|r| r.waypoints).collect();
                let demos = split(&c.array("demos")?.data, &lengths)?;
                let maps = c.array("costmaps")?;
                if maps.shape != [worlds.len(), resolution, resolution] {
                    return Err(PipelineError::ShapeMismatch {
                        name: "costmaps".into(),
                        expected: vec![worlds.len(), resolution, resolution],
                        found: maps.data.len(),
                    });
                }
                let mut out = Vec::with_capacity(records.len());
                for (h, demo) in records.into_iter().zip(demos) {
                    let world = worlds.get(h.world).cloned().ok_or_else(|| PipelineError::Format(format!("record refers to missing world {}", h.world)))?;
                    out.push(Stage2Record { world, start: h.start, goal: h.goal, demo, labels: h.labels });
                }
                Ok(Dataset::Stage2 { records: out, meta })
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        self.to_container()?.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        Self::from_container(&Container::read(bytes, DATASET_MAGIC)?)
    }
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), PipelineError> {
    let mut out = BufWriter::new(File::create(path)?);
    dataset.to_container()?.write(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, PipelineError> {
    let input = BufReader::new(File::open(path)?);
    Dataset::from_container(&Container::read(input, DATASET_MAGIC)?)
}
