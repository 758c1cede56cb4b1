//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its value. [`Graph::backward`] walks the tape in reverse,
//! accumulating vector-Jacobian products into the nodes that need them.
//! Graphs are single-use: build one per forward pass.

use std::f64::consts::PI;
use std::rc::Rc;

use super::{NumericsError, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention mask: `allowed(i, j)` is true when query `i` may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self, NumericsError> {
        if allowed.len() != rows * cols {
            return Err(NumericsError::DataLength { shape: vec![rows, cols], len: allowed.len() });
        }
        Ok(Self { rows, cols, allowed })
    }

    /// Lower-triangular mask: position `i` sees positions `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::prefix_causal(0, n)
    }

    /// `prefix` context positions attend to each other freely; the remaining
    /// positions see the whole prefix plus themselves and earlier positions.
    pub fn prefix_causal(prefix: usize, n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                allowed[i * n + j] = if i < prefix { j < prefix } else { j <= i };
            }
        }
        Self { rows: n, cols: n, allowed }
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// How [`Graph::gaussian_nll`] pairs distributions with points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NllPairing {
    /// Row `i` of the points is scored under distribution `i`; output `[k]`.
    Paired,
    /// Every point is scored under every distribution; output `[k, p]`.
    Cross,
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Softplus(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    Sum(Var),
    StraightThrough(Var),
    GaussianNll { mu: Var, lower: Var, diag: Var, points: Var, pairing: NllPairing },
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub const LAYERNORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(self.shape_err(op, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a length-`n` vector to every row of an `[.., n]` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.numel() != ta.cols() {
            return Err(self.shape_err("add_row", a, row));
        }
        let n = ta.cols();
        let mut value = ta.clone();
        for chunk in value.data_mut().chunks_mut(n) {
            for (x, r) in chunk.iter_mut().zip(tr.data()) {
                *x += r;
            }
        }
        let ng = self.ng(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= s);
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x += s);
        let ng = self.ng(&[a]);
        self.push(value, Op::AddScalar(a), ng)
    }

    /// Matrix product over the last two axes; leading batch axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let plan = MatmulPlan::new(self.shape(a), self.shape(b)).ok_or_else(|| self.shape_err("matmul", a, b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; plan.out_shape.iter().product()];
        let (m, k, n) = (plan.m, plan.k, plan.n);
        for (bi, (oa, ob)) in plan.offsets.iter().enumerate() {
            mm(
                &ta.data()[oa * m * k..(oa + 1) * m * k],
                &tb.data()[ob * k * n..(ob + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(plan.out_shape, out)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(NumericsError::Rank { op: "transpose", expected: 2, got: ta.shape().to_vec() });
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        let ng = self.ng(&[a]);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(NumericsError::Axis { axis, rank: tx.rank() });
        }
        let (outer, len, inner) = split_axis(tx.shape(), axis);
        let mut out = tx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| o * len * inner + t * inner + i;
                let max = (0..len).map(|t| out[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for t in 0..len {
                    let e = (out[at(t)] - max).exp();
                    out[at(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    out[at(t)] /= total;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, ng))
    }

    /// Row-wise softmax of a matrix where disallowed entries get weight exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Mask>) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        if tx.rank() != 2 || (tx.shape()[0], tx.shape()[1]) != mask.shape() {
            return Err(NumericsError::Shape {
                op: "masked_softmax",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.rows, mask.cols],
            });
        }
        let (r, c) = (mask.rows, mask.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let max = (0..c)
                .filter(|&j| mask.allowed(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::DegenerateInput("attention row with every key masked"));
            }
            let mut total = 0.0;
            for j in 0..c {
                if mask.allowed(i, j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= total;
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::MaskedSoftmax { x }, ng))
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let n = tx.cols();
        if self.value(gamma).numel() != n {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.value(beta).numel() != n {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            let u = GELU_C * (*v + GELU_A * *v * *v * *v);
            *v = 0.5 * *v * (1.0 + u.tanh());
        }
        let ng = self.ng(&[x]);
        self.push(value, Op::Gelu(x), ng)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = softplus(*v));
        let ng = self.ng(&[x]);
        self.push(value, Op::Softplus(x), ng)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let n = tx.cols();
        let mut value = tx.clone();
        let mut norms = Vec::with_capacity(tx.rows());
        for chunk in value.data_mut().chunks_mut(n) {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(NumericsError::DegenerateInput("l2_normalize of a zero vector"));
            }
            chunk.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::L2Normalize { x, norms }, ng))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let c = tx.cols();
        if len == 0 || start + len > c {
            return Err(NumericsError::Range { op: "slice_cols", index: start + len, bound: c });
        }
        let rows = tx.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.data()[r * c + start..r * c + start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let value = Tensor::new(vec![rows, cols], out)?;
        let ng = self.ng(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(NumericsError::Range { op: "gather_rows", index: i, bound: rows });
            }
            out.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new(vec![idx.len(), c], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::GatherRows { x, idx: idx.to_vec() }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    /// Takes the value of `forward` but routes incoming gradients to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, forward: Tensor) -> Result<Var, NumericsError> {
        if forward.shape() != self.shape(x) {
            return Err(NumericsError::Shape {
                op: "straight_through",
                lhs: self.shape(x).to_vec(),
                rhs: forward.shape().to_vec(),
            });
        }
        let ng = self.ng(&[x]);
        Ok(self.push(forward, Op::StraightThrough(x), ng))
    }

    /// Negative log-density of points under Gaussians parameterized by
    /// `Σ = L D Lᵀ` with unit-lower-triangular `L`.
    ///
    /// `mu` and `diag` are `[k, n]`, `lower` is `[k, n(n-1)/2]` holding the
    /// strictly-lower entries of `L` row by row, `points` is `[p, n]`.
    pub fn gaussian_nll(
        &mut self,
        mu: Var,
        lower: Var,
        diag: Var,
        points: Var,
        pairing: NllPairing,
    ) -> Result<Var, NumericsError> {
        let (tm, tl, td, tp) = (self.value(mu), self.value(lower), self.value(diag), self.value(points));
        let n = tm.cols();
        let k = tm.rows();
        let p = tp.rows();
        let nl = n * (n - 1) / 2;
        let lower_ok = if nl == 0 { tl.rows() == k } else { tl.rows() == k && tl.cols() == nl };
        if td.rows() != k || td.cols() != n || tp.cols() != n || !lower_ok {
            return Err(self.shape_err("gaussian_nll", mu, points));
        }
        if pairing == NllPairing::Paired && p != k {
            return Err(self.shape_err("gaussian_nll", mu, points));
        }
        if td.data().iter().any(|&d| !(d > 0.0)) {
            return Err(NumericsError::NotPositiveDefinite);
        }
        let mut y = vec![0.0; n];
        let out = match pairing {
            NllPairing::Paired => (0..k)
                .map(|i| nll_one(tm.row(i), lower_row(tl, i, nl), td.row(i), tp.row(i), &mut y))
                .collect::<Vec<_>>(),
            NllPairing::Cross => {
                let mut out = Vec::with_capacity(k * p);
                for i in 0..k {
                    for j in 0..p {
                        out.push(nll_one(tm.row(i), lower_row(tl, i, nl), td.row(i), tp.row(j), &mut y));
                    }
                }
                out
            }
        };
        let shape = match pairing {
            NllPairing::Paired => vec![k],
            NllPairing::Cross => vec![k, p],
        };
        let value = Tensor::new(shape, out)?;
        let ng = self.ng(&[mu, lower, diag, points]);
        Ok(self.push(value, Op::GaussianNll { mu, lower, diag, points, pairing }, ng))
    }

    /// Summed softmax cross-entropy of `logits` rows against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let tl = self.value(logits);
        let (r, c) = (tl.rows(), tl.cols());
        if targets.len() != r {
            return Err(NumericsError::DataLength { shape: vec![r], len: targets.len() });
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(NumericsError::Range { op: "cross_entropy", index: t, bound: c });
            }
            let row = tl.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let ng = self.ng(&[logits]);
        Ok(self.push(Tensor::scalar(total), Op::CrossEntropy { logits, targets: targets.to_vec() }, ng))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericsError> {
        if self.value(root).numel() != 1 {
            return Err(NumericsError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                }
                if let Some(s) = self.slot(grads, *row) {
                    let n = s.len();
                    for chunk in gd.chunks(n) {
                        s.iter_mut().zip(chunk).for_each(|(s, g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                if let Some(s) = self.slot(grads, *a) {
                    for ((s, g), y) in s.iter_mut().zip(gd).zip(&vb) {
                        *s += g * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((s, g), x) in s.iter_mut().zip(gd).zip(&va) {
                        *s += g * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s += g * k);
                }
            }
            Op::AddScalar(a) | Op::StraightThrough(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                }
            }
            Op::Matmul(a, b) => {
                let plan = MatmulPlan::new(self.shape(*a), self.shape(*b)).expect("validated in forward");
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let ta = self.value(*a).data().to_vec();
                let tb = self.value(*b).data().to_vec();
                if let Some(s) = self.slot(grads, *a) {
                    for (bi, (oa, ob)) in plan.offsets.iter().enumerate() {
                        mm_nt(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &tb[ob * k * n..(ob + 1) * k * n],
                            &mut s[oa * m * k..(oa + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (bi, (oa, ob)) in plan.offsets.iter().enumerate() {
                        mm_tn(
                            &ta[oa * m * k..(oa + 1) * m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &mut s[ob * k * n..(ob + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += gd[j * r + i];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                if let Some(s) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |t: usize| o * len * inner + t * inner + i;
                            let dot: f64 = (0..len).map(|t| gd[at(t)] * y[at(t)]).sum();
                            for t in 0..len {
                                s[at(t)] += y[at(t)] * (gd[at(t)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x } => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for ((yr, gr), sr) in y.chunks(c).zip(gd.chunks(c)).zip(s.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            sr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let n = node.value.cols();
                let gam = self.value(*gamma).data().to_vec();
                if let Some(s) = self.slot(grads, *gamma) {
                    for (gr, hr) in gd.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *beta) {
                    for gr in gd.chunks(n) {
                        s.iter_mut().zip(gr).for_each(|(s, g)| *s += g);
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    let nf = n as f64;
                    for (r, ((gr, hr), sr)) in gd.chunks(n).zip(xhat.chunks(n)).zip(s.chunks_mut(n)).enumerate() {
                        let dh: Vec<f64> = gr.iter().zip(&gam).map(|(g, w)| g * w).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            sr[j] += inv_std[r] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data().to_vec();
                if let Some(s) = self.slot(grads, *x) {
                    for ((s, g), &v) in s.iter_mut().zip(gd).zip(&xv) {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *s += g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data().to_vec();
                if let Some(s) = self.slot(grads, *x) {
                    for ((s, g), &v) in s.iter_mut().zip(gd).zip(&xv) {
                        *s += g * sigmoid(v);
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for (r, ((yr, gr), sr)) in y.chunks(n).zip(gd.chunks(n)).zip(s.chunks_mut(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            sr[j] += (gr[j] - yr[j] * dot) / norms[r];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for (r, gr) in gd.chunks(len).enumerate() {
                        for j in 0..len {
                            s[r * c + start + j] += gr[j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(s) = self.slot(grads, p) {
                        for (r, sr) in s.chunks_mut(w).enumerate() {
                            for j in 0..w {
                                sr[j] += gd[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if let Some(s) = self.slot(grads, p) {
                        s.iter_mut().zip(&gd[offset..offset + len]).for_each(|(s, g)| *s += g);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            s[src * c + j] += gd[r * c + j];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|s| *s += gd[0]);
                }
            }
            Op::GaussianNll { mu, lower, diag, points, pairing } => {
                self.nll_backward(gd, *mu, *lower, *diag, *points, *pairing, grads);
            }
            Op::CrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                let c = tl.cols();
                let rows: Vec<Vec<f64>> = (0..tl.rows()).map(|r| tl.row(r).to_vec()).collect();
                if let Some(s) = self.slot(grads, *logits) {
                    for (r, row) in rows.iter().enumerate() {
                        let lse = log_sum_exp(row);
                        for j in 0..c {
                            let p = (row[j] - lse).exp();
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            s[r * c + j] += gd[0] * (p - onehot);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn nll_backward(
        &self,
        gd: &[f64],
        mu: Var,
        lower: Var,
        diag: Var,
        points: Var,
        pairing: NllPairing,
        grads: &mut [Option<Tensor>],
    ) {
        let (tm, tl, td, tp) = (self.value(mu), self.value(lower), self.value(diag), self.value(points));
        let n = tm.cols();
        let nl = n * (n - 1) / 2;
        let (k, p) = (tm.rows(), tp.rows());
        let mut d_mu = vec![0.0; k * n];
        let mut d_low = vec![0.0; k * nl];
        let mut d_diag = vec![0.0; k * n];
        let mut d_pts = vec![0.0; p * n];
        let pairs: Vec<(usize, usize, f64)> = match pairing {
            NllPairing::Paired => (0..k).map(|i| (i, i, gd[i])).collect(),
            NllPairing::Cross => (0..k).flat_map(|i| (0..p).map(move |j| (i, j, gd[i * p + j]))).collect(),
        };
        let mut y = vec![0.0; n];
        let mut v = vec![0.0; n];
        for (i, j, s) in pairs {
            if s == 0.0 {
                continue;
            }
            let (m, l, d, q) = (tm.row(i), lower_row(tl, i, nl), td.row(i), tp.row(j));
            forward_solve(l, m, q, &mut y);
            // v = L^-T (y / D)
            for a in (0..n).rev() {
                let mut acc = y[a] / d[a];
                for b in a + 1..n {
                    acc -= l[tri(b, a)] * v[b];
                }
                v[a] = acc;
            }
            for a in 0..n {
                d_mu[i * n + a] -= s * v[a];
                d_pts[j * n + a] += s * v[a];
                d_diag[i * n + a] += s * 0.5 * (1.0 / d[a] - y[a] * y[a] / (d[a] * d[a]));
                for b in 0..a {
                    d_low[i * nl + tri(a, b)] -= s * v[a] * y[b];
                }
            }
        }
        for (var, buf) in [(mu, d_mu), (lower, d_low), (diag, d_diag), (points, d_pts)] {
            if let Some(s) = self.slot(grads, var) {
                s.iter_mut().zip(&buf).for_each(|(s, g)| *s += g);
            }
        }
    }
}

/// Index of the strictly-lower entry `(i, j)`, `i > j`, in row-major packing.
pub(crate) fn tri(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

fn lower_row(t: &Tensor, i: usize, nl: usize) -> &[f64] {
    if nl == 0 {
        &[]
    } else {
        t.row(i)
    }
}

/// Solves `L y = q - mu` for unit-lower-triangular `L`.
fn forward_solve(lower: &[f64], mu: &[f64], q: &[f64], y: &mut [f64]) {
    for a in 0..mu.len() {
        let mut acc = q[a] - mu[a];
        for b in 0..a {
            acc -= lower[tri(a, b)] * y[b];
        }
        y[a] = acc;
    }
}

pub(crate) fn nll_one(mu: &[f64], lower: &[f64], diag: &[f64], q: &[f64], y: &mut [f64]) -> f64 {
    let n = mu.len();
    forward_solve(lower, mu, q, y);
    let mut acc = n as f64 * (2.0 * PI).ln();
    for a in 0..n {
        acc += diag[a].ln() + y[a] * y[a] / diag[a];
    }
    0.5 * acc
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    /// Per output batch: (batch index into a, batch index into b).
    offsets: Vec<(usize, usize)>,
}

impl MatmulPlan {
    fn new(sa: &[usize], sb: &[usize]) -> Option<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return None;
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return None;
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut batch = Vec::with_capacity(rank);
        for (x, y) in pa.iter().zip(&pb) {
            match (x, y) {
                (x, y) if x == y => batch.push(*x),
                (1, y) => batch.push(*y),
                (x, 1) => batch.push(*x),
                _ => return None,
            }
        }
        let total: usize = batch.iter().product();
        let mut offsets = Vec::with_capacity(total);
        for lin in 0..total {
            let (mut rem, mut oa, mut ob, mut sa_, mut sb_) = (lin, 0, 0, 1, 1);
            for d in (0..rank).rev() {
                let idx = rem % batch[d];
                rem /= batch[d];
                if pa[d] != 1 {
                    oa += idx * sa_;
                }
                if pb[d] != 1 {
                    ob += idx * sb_;
                }
                sa_ *= pa[d];
                sb_ *= pb[d];
            }
            offsets.push((oa, ob));
        }
        let mut out_shape = batch;
        out_shape.extend_from_slice(&[m, n]);
        Some(Self { m, k, n, out_shape, offsets })
    }
}

/// out[m,n] += a[m,k] * b[k,n]
fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += g[m,n] * b[k,n]^T
fn mm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k,n] += a[m,k]^T * g[m,n]
fn mm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}
