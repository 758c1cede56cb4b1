//! Binary container shared by checkpoints and datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes
//! version    u32
//! json_len   u64, then json_len bytes of UTF-8 JSON
//! count      u32
//! count x { name_len u32, name bytes, rank u32, rank x u64 dims }
//! array data as f32, in declaration order
//! ```

use std::io::{Read, Write};

use super::PipelineError;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"VQMPTCK1";
pub const DATASET_MAGIC: [u8; 8] = *b"VQMPTDS1";
pub const FORMAT_VERSION: u32 = 1;

/// Refuse absurd headers before allocating.
const MAX_JSON: u64 = 1 << 30;
const MAX_ARRAYS: u32 = 1 << 20;
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, PipelineError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PipelineError::ShapeMismatch { name, expected: shape, found: data.len() });
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Result<Self, PipelineError> {
        Self::new(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub json: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn array(&self, name: &str) -> Result<&NamedArray, PipelineError> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| PipelineError::Format(format!("missing array {name:?}")))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), PipelineError> {
        let json = serde_json::to_vec(&self.json).map_err(|e| PipelineError::Format(e.to_string()))?;
        out.write_all(&self.magic)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        out.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            out.write_all(&(a.name.len() as u32).to_le_bytes())?;
            out.write_all(a.name.as_bytes())?;
            out.write_all(&(a.shape.len() as u32).to_le_bytes())?;
            for &d in &a.shape {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        for a in &self.arrays {
            let mut buf = Vec::with_capacity(a.data.len() * 4);
            for v in &a.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, PipelineError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    /// Parses a container, insisting on `expected_magic`.
    pub fn read<R: Read>(mut input: R, expected_magic: [u8; 8]) -> Result<Self, PipelineError> {
        let mut magic = [0u8; 8];
        read_exact(&mut input, &mut magic)?;
        if magic != expected_magic {
            return Err(PipelineError::BadMagic { expected: expected_magic, found: magic });
        }
        let version = u32::from_le_bytes(read_array(&mut input)?);
        if version != FORMAT_VERSION {
            return Err(PipelineError::UnsupportedVersion(version));
        }
        let json_len = u64::from_le_bytes(read_array(&mut input)?);
        if json_len > MAX_JSON {
            return Err(PipelineError::Format(format!("config block of {json_len} bytes is implausible")));
        }
        let json_bytes = read_vec(&mut input, json_len as usize)?;
        let json: serde_json::Value =
            serde_json::from_slice(&json_bytes).map_err(|e| PipelineError::Format(format!("config block: {e}")))?;
        let count = u32::from_le_bytes(read_array(&mut input)?);
        if count > MAX_ARRAYS {
            return Err(PipelineError::Format(format!("{count} arrays is implausible")));
        }
        let mut headers = Vec::with_capacity(count as usize);
        let mut total: u64 = 0;
        for _ in 0..count {
            let name_len = u32::from_le_bytes(read_array(&mut input)?);
            if name_len > 4096 {
                return Err(PipelineError::Format(format!("array name of {name_len} bytes is implausible")));
            }
            let name = String::from_utf8(read_vec(&mut input, name_len as usize)?)
                .map_err(|_| PipelineError::Format("array name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(read_array(&mut input)?);
            if rank > MAX_RANK {
                return Err(PipelineError::Format(format!("array {name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut numel: u64 = 1;
            for _ in 0..rank {
                let d = u64::from_le_bytes(read_array(&mut input)?);
                numel = numel.checked_mul(d).filter(|&n| n <= MAX_ELEMENTS).ok_or_else(|| {
                    PipelineError::Format(format!("array {name:?} is implausibly large"))
                })?;
                shape.push(d as usize);
            }
            total = total.saturating_add(numel);
            if total > MAX_ELEMENTS {
                return Err(PipelineError::Format("arrays are implausibly large".into()));
            }
            headers.push((name, shape, numel as usize));
        }
        let mut arrays = Vec::with_capacity(headers.len());
        for (name, shape, numel) in headers {
            let bytes = read_vec(&mut input, numel * 4)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            arrays.push(NamedArray { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(PipelineError::Format("trailing bytes after the last array".into()));
        }
        Ok(Self { magic, json, arrays })
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<(), PipelineError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => PipelineError::Truncated,
        _ => PipelineError::Io(e.to_string()),
    })
}

fn read_array<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N], PipelineError> {
    let mut buf = [0u8; N];
    read_exact(input, &mut buf)?;
    Ok(buf)
}

/// Reads `len` bytes without trusting `len` for the up-front allocation.
fn read_vec<R: Read>(input: &mut R, len: usize) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::with_capacity(len.min(1 << 20));
    let got = input.take(len as u64).read_to_end(&mut buf)?;
    if got != len {
        return Err(PipelineError::Truncated);
    }
    Ok(buf)
}
