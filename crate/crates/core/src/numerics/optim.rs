use super::{NumericsError, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPSILON: f64 = 1e-9;

/// First/second moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyper(params, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON).expect("default hyperparameters are valid")
    }

    pub fn with_hyper(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Result<Self, NumericsError> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta1) || !in_unit(beta2) || !(epsilon > 0.0) {
            return Err(NumericsError::Config(format!(
                "adam needs beta1, beta2 in (0,1) and epsilon > 0, got {beta1}, {beta2}, {epsilon}"
            )));
        }
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self { step: 0, m: zeros(), v: zeros(), beta1, beta2, epsilon })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::Config(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NumericsError::Shape { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Inverse-square-root schedule with linear warmup:
/// `d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub model_dim: usize,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(model_dim: usize, warmup_steps: usize) -> Result<Self, NumericsError> {
        if model_dim == 0 || warmup_steps == 0 {
            return Err(NumericsError::Config("schedule needs positive model_dim and warmup_steps".into()));
        }
        Ok(Self { model_dim, warmup_steps })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64, NumericsError> {
        if step == 0 {
            return Err(NumericsError::Domain("learning-rate schedule is defined for step >= 1".into()));
        }
        let s = step as f64;
        let w = self.warmup_steps as f64;
        Ok((self.model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::vector(vec![0.3, -1.2, 4.0])];
        let before = p.clone();
        let g = vec![Tensor::vector(vec![0.0; 3])];
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With m = v = 0 the bias-corrected step is lr * g / (|g| + eps).
        let mut p = vec![Tensor::vector(vec![1.0, 1.0, 1.0, 1.0])];
        let g = vec![Tensor::vector(vec![3.0, -0.5, 1e-3, -250.0])];
        let mut st = AdamState::new(&p);
        let lr = 0.01;
        adam_step(&mut p, &g, &mut st, lr).unwrap();
        for (x, gi) in p[0].data().iter().zip(g[0].data()) {
            let expected = 1.0 - lr * gi.signum();
            assert!((x - expected).abs() < lr * 1e-6 + 1e-12, "{x} vs {expected}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let p0 = vec![Tensor::vector(vec![0.1, 0.2]), Tensor::vector(vec![-0.7])];
        let g = vec![Tensor::vector(vec![0.4, -0.9]), Tensor::vector(vec![2.5])];
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(&p);
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let p = vec![Tensor::scalar(0.0)];
        assert!(AdamState::with_hyper(&p, 1.0, 0.98, 1e-9).is_err());
        assert!(AdamState::with_hyper(&p, 0.9, 0.98, 0.0).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::new(64, 400).unwrap();
        assert!((s.lr_at(400).unwrap() - 0.00625).abs() < 1e-15);
        let lr1 = s.lr_at(1).unwrap();
        assert!((lr1 - 64f64.powf(-0.5) * 400f64.powf(-1.5)).abs() < 1e-18);
        assert!(s.lr_at(0).is_err());
        let peak = s.lr_at(400).unwrap();
        for step in 1..5000 {
            assert!(s.lr_at(step).unwrap() <= peak);
        }
    }

    #[test]
    fn schedule_rises_then_falls() {
        let s = LrSchedule::new(32, 50).unwrap();
        for step in 1..50 {
            assert!(s.lr_at(step).unwrap() < s.lr_at(step + 1).unwrap());
        }
        for step in 50..400 {
            assert!(s.lr_at(step).unwrap() > s.lr_at(step + 1).unwrap());
        }
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
        assert!((g[1].data()[0] - 0.8).abs() < 1e-12);
    }
}
