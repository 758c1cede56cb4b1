use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{nll_one, tri, NumericsError};

/// Gaussian in factored form `Σ = L D Lᵀ`, with `L` unit lower-triangular
/// and `D` a positive diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    /// Strictly-lower entries of `L`, packed row by row: `(1,0), (2,0), (2,1), ...`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, lower: Vec<f64>, diag: Vec<f64>) -> Result<Self, NumericsError> {
        let n = mean.len();
        if n == 0 || diag.len() != n || lower.len() != n * (n - 1) / 2 {
            return Err(NumericsError::Shape {
                op: "gaussian_params",
                lhs: vec![n, lower.len()],
                rhs: vec![diag.len()],
            });
        }
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(NumericsError::NotPositiveDefinite);
        }
        Ok(Self { mean, lower, diag })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self, NumericsError> {
        let n = mean.len();
        Self::new(mean, vec![0.0; n * n.saturating_sub(1) / 2], vec![variance; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dense `L`.
    pub fn unit_lower(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut l = vec![vec![0.0; n]; n];
        for (i, row) in l.iter_mut().enumerate() {
            row[i] = 1.0;
            for (j, v) in row.iter_mut().enumerate().take(i) {
                *v = self.lower[tri(i, j)];
            }
        }
        l
    }

    /// Dense `Σ = L D Lᵀ`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let l = self.unit_lower();
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                s[i][j] = (0..n).map(|k| l[i][k] * self.diag[k] * l[j][k]).sum();
            }
        }
        s
    }

    pub fn log_det(&self) -> f64 {
        self.diag.iter().map(|d| d.ln()).sum()
    }

    pub fn nll(&self, q: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim()];
        nll_one(&self.mean, &self.lower, &self.diag, q, &mut y)
    }

    pub fn density(&self, q: &[f64]) -> f64 {
        (-self.nll(q)).exp()
    }

    /// Draw `mean + L sqrt(D) z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let z: Vec<f64> = (0..n).map(|i| self.diag[i].sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
        (0..n)
            .map(|i| self.mean[i] + z[i] + (0..i).map(|j| self.lower[tri(i, j)] * z[j]).sum::<f64>())
            .collect()
    }
}

/// `-log N(q; mean, L D Lᵀ)` via triangular substitution.
pub fn gaussian_nll(q: &[f64], params: &GaussianParams) -> Result<f64, NumericsError> {
    if q.len() != params.dim() {
        return Err(NumericsError::Shape { op: "gaussian_nll", lhs: vec![q.len()], rhs: vec![params.dim()] });
    }
    if params.diag.iter().any(|&d| !(d > 0.0)) {
        return Err(NumericsError::NotPositiveDefinite);
    }
    Ok(params.nll(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Dense 2x2 oracle: explicit determinant and inverse.
    fn dense_nll_2d(q: &[f64], mu: &[f64], s: &[Vec<f64>]) -> f64 {
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let r = [q[0] - mu[0], q[1] - mu[1]];
        let quad = r[0] * (inv[0][0] * r[0] + inv[0][1] * r[1]) + r[1] * (inv[1][0] * r[0] + inv[1][1] * r[1]);
        0.5 * (2.0 * (2.0 * PI).ln() + det.ln() + quad)
    }

    #[test]
    fn standard_normal_at_mean() {
        let g = GaussianParams::isotropic(vec![0.3, -0.2], 1.0).unwrap();
        let nll = gaussian_nll(&[0.3, -0.2], &g).unwrap();
        assert!((nll - (2.0 * PI).ln()).abs() < 1e-12);
        assert!((nll - 1.837_877_066).abs() < 1e-8);
    }

    #[test]
    fn scaling_variance_by_four_adds_ln2() {
        let a = GaussianParams::new(vec![0.0], vec![], vec![1.0]).unwrap();
        let b = GaussianParams::new(vec![0.0], vec![], vec![4.0]).unwrap();
        let diff = gaussian_nll(&[0.0], &b).unwrap() - gaussian_nll(&[0.0], &a).unwrap();
        assert!((diff - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_diag_rejected() {
        assert_eq!(
            GaussianParams::new(vec![0.0, 0.0], vec![0.1], vec![1.0, 0.0]),
            Err(NumericsError::NotPositiveDefinite)
        );
        let bad = GaussianParams { mean: vec![0.0], lower: vec![], diag: vec![-1.0] };
        assert_eq!(gaussian_nll(&[0.0], &bad), Err(NumericsError::NotPositiveDefinite));
    }

    #[test]
    fn covariance_from_factors() {
        let g = GaussianParams::new(vec![0.0, 0.0], vec![0.5], vec![1.0, 4.0]).unwrap();
        let s = g.covariance();
        let expected = [[1.0, 0.5], [0.5, 4.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_dense_oracle_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let mu = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let l = rng.random_range(-3.0..3.0);
            // log-uniform D keeps the condition number below 1e6
            let d = vec![10f64.powf(rng.random_range(-2.5..0.5)), 10f64.powf(rng.random_range(-2.5..0.5))];
            let g = GaussianParams::new(mu.clone(), vec![l], d).unwrap();
            let q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let fast = gaussian_nll(&q, &g).unwrap();
            let dense = dense_nll_2d(&q, &mu, &g.covariance());
            assert!((fast - dense).abs() < 1e-8 * (1.0 + dense.abs()), "{fast} vs {dense}");
        }
    }

    #[test]
    fn sample_moments() {
        let g = GaussianParams::new(vec![1.0, -2.0], vec![0.5], vec![1.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 100_000;
        let (mut sx, mut sy, mut sxy, mut sxx) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let s = g.sample(&mut rng);
            sx += s[0];
            sy += s[1];
            sxy += (s[0] - 1.0) * (s[1] + 2.0);
            sxx += (s[0] - 1.0).powi(2);
        }
        let mf = m as f64;
        assert!((sx / mf - 1.0).abs() < 3.0 * 1.0 / mf.sqrt());
        assert!((sy / mf + 2.0).abs() < 3.0 * 4.25f64.sqrt() / mf.sqrt());
        assert!((sxy / mf - 0.5).abs() < 0.03);
        assert!((sxx / mf - 1.0).abs() < 0.03);
    }
}
