//! Central finite-difference gradient checking.
//!
//! Errors are reported per input as `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, FLOOR)`.

use rand::seq::index::sample;
use rand::Rng;

use super::{Bound, Graph, NumericsError, ParamStore, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-4;
/// Keeps the ratio meaningful for inputs whose true gradient vanishes.
pub const FLOOR: f64 = 1e-7;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(FLOOR)
}

/// Checks every element of every input. `f` must build a scalar from the given leaves.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut errs = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        errs.push(rel_err(analytic.data(), &numeric));
    }
    Ok(errs)
}

/// Checks a random subset of up to `per_tensor` elements of each parameter in `store`
/// whose name passes `select`. Returns `(parameter name, relative error)` pairs.
pub fn check_params<F, S, R>(
    store: &ParamStore,
    step: f64,
    per_tensor: usize,
    rng: &mut R,
    select: S,
    f: F,
) -> Result<Vec<(String, f64)>, NumericsError>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, NumericsError>,
    S: Fn(&str) -> bool,
    R: Rng,
{
    let eval = |s: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let p = s.bind(&mut g, false);
        let out = f(&mut g, &p)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let out = f(&mut g, &bound)?;
    let grads = g.backward(out)?;
    let analytic = bound.collect(&grads, store);
    let mut work = store.clone();
    let mut report = Vec::new();
    for id in store.ids().filter(|&id| select(store.name(id))) {
        let numel = store.get(id).numel();
        let picks = sample(rng, numel, per_tensor.min(numel)).into_vec();
        let mut a = Vec::with_capacity(picks.len());
        let mut n = Vec::with_capacity(picks.len());
        for e in picks {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            a.push(analytic[id.index()].data()[e]);
            n.push((plus - minus) / (2.0 * step));
        }
        report.push((store.name(id).to_string(), rel_err(&a, &n)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // stop_gradient hides the true dependence, so the check must fail.
        let x = Tensor::vector(vec![0.5, -1.0]);
        let errs = check_inputs(&[x], DEFAULT_STEP, |g, v| {
            let s = g.stop_gradient(v[0]);
            let y = g.mul(v[0], s)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(errs[0] > 0.1);
    }

    #[test]
    fn matmul_identity_and_row_dot() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = g.constant(Tensor::identity(2));
        let ia = g.matmul(i, a).unwrap();
        assert_eq!(g.value(ia), g.value(a));
        let ones = g.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let r = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(r).data(), &[3.0, 7.0]);
    }
}
