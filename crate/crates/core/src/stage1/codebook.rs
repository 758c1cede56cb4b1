use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Tensor};

/// An entry of a wrapped code sequence: the static start and goal encodings around quantized steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeToken {
    Start,
    Code(usize),
    Goal,
}

/// Unit-norm code vectors `[N, d_f]` plus the static start/goal encodings of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub codes: Tensor,
    pub start: Tensor,
    pub goal: Tensor,
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| (x / n) as f32 as f64).collect();
        }
    }
}

impl Codebook {
    pub fn random<R: Rng + ?Sized>(size: usize, d_factor: usize, d_model: usize, rng: &mut R) -> Result<Self, NumericsError> {
        if size < 2 || d_factor == 0 || d_factor >= d_model {
            return Err(NumericsError::Config(format!(
                "codebook needs N >= 2 and 0 < d_f < d, got N={size}, d_f={d_factor}, d={d_model}"
            )));
        }
        let data: Vec<f64> = (0..size).flat_map(|_| random_unit(rng, d_factor)).collect();
        Ok(Self {
            codes: Tensor::new(vec![size, d_factor], data)?,
            start: Tensor::vector(random_unit(rng, d_model)),
            goal: Tensor::vector(random_unit(rng, d_model)),
        })
    }

    pub fn size(&self) -> usize {
        self.codes.rows()
    }

    pub fn factor_dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn code(&self, i: usize) -> &[f64] {
        self.codes.row(i)
    }

    /// Nearest code by Euclidean distance, lowest index on ties.
    pub fn quantize(&self, z: &[f64]) -> Result<usize, NumericsError> {
        if z.len() != self.factor_dim() {
            return Err(NumericsError::Shape { op: "quantize", lhs: vec![z.len()], rhs: self.codes.shape().to_vec() });
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(NumericsError::DegenerateInput("quantize of a zero or non-finite query"));
        }
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.size() {
            let d: f64 = self.code(i).iter().zip(z).map(|(c, q)| (c - q) * (c - q)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    /// Projects every code back onto the unit sphere, keeping values on the `f32` grid.
    pub fn renormalize(&mut self) {
        let d = self.factor_dim();
        for row in self.codes.data_mut().chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v / n) as f32 as f64);
            }
        }
    }

    pub fn set_code(&mut self, i: usize, value: &[f64]) {
        let d = self.factor_dim();
        self.codes.data_mut()[i * d..(i + 1) * d].copy_from_slice(value);
    }
}
