use rand::Rng;

use crate::env2d::{seeded_rng, Config2D, Rng as EnvRng};
use crate::numerics::{GaussianParams, NumericsError};
use crate::planners::{Sampler, SamplerKind};
use crate::stage1::{Codebook, Stage1Model};

/// Equal-weight mixture of Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub components: Vec<GaussianParams>,
}

impl Gmm {
    pub fn new(components: Vec<GaussianParams>) -> Result<Self, NumericsError> {
        if components.is_empty() {
            return Err(NumericsError::Domain("empty prediction: no components to mix".into()));
        }
        Ok(Self { components })
    }

    pub fn density(&self, q: Config2D) -> f64 {
        let x = q.to_array();
        self.components.iter().map(|c| c.density(&x)).sum::<f64>() / self.components.len() as f64
    }

    pub fn mean(&self) -> Config2D {
        let k = self.components.len() as f64;
        let (sx, sy) = self.components.iter().fold((0.0, 0.0), |(a, b), c| (a + c.mean[0], b + c.mean[1]));
        Config2D::new(sx / k, sy / k)
    }

    /// Pick a component uniformly, then draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Config2D {
        let c = &self.components[rng.random_range(0..self.components.len())];
        let v = c.sample(rng);
        Config2D::new(v[0], v[1])
    }
}

/// Decodes every non-goal index of `sequence` through the Stage-1 decoder.
pub fn build_gmm(stage1: &Stage1Model, codebook: &Codebook, sequence: &[usize]) -> Result<Gmm, NumericsError> {
    let goal = codebook.size();
    let comps = sequence
        .iter()
        .filter(|&&h| h != goal)
        .map(|&h| {
            if h > goal {
                return Err(NumericsError::Range { op: "build_gmm", index: h, bound: goal + 1 });
            }
            stage1.decode_to_gaussian(codebook.code(h))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Gmm::new(comps)
}

/// Planner sampler drawing from a mixture with its own seeded generator.
pub struct GmmSampler {
    gmm: Gmm,
    rng: EnvRng,
}

impl GmmSampler {
    pub fn new(gmm: Gmm, seed: u64) -> Self {
        Self { gmm, rng: seeded_rng(seed) }
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }
}

impl Sampler for GmmSampler {
    fn draw(&mut self) -> Config2D {
        self.gmm.sample(&mut self.rng)
    }

    fn kind(&self) -> SamplerKind {
        SamplerKind::Gmm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_component_density_at_mean() {
        let g = Gmm::new(vec![GaussianParams::isotropic(vec![1.0, 2.0], 1.0).unwrap()]).unwrap();
        assert!((g.density(Config2D::new(1.0, 2.0)) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn empty_mixture_rejected() {
        assert!(Gmm::new(Vec::new()).is_err());
    }
}
