//! Transformer building blocks on top of [`Graph`].

use std::rc::Rc;

use rand::Rng;

use super::{Bound, Graph, Mask, NumericsError, ParamId, ParamStore, Tensor, Var};

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let y = g.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => g.add_row(y, p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Scaled dot-product attention `softmax(Q Kᵀ / sqrt(d_v)) V`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&Rc<Mask>>) -> Result<Var, NumericsError> {
    if g.shape(q).len() != 2 || g.shape(k).len() != 2 || g.shape(v).len() != 2 {
        return Err(NumericsError::Rank { op: "attention", expected: 2, got: g.shape(q).to_vec() });
    }
    if g.shape(q)[1] != g.shape(k)[1] {
        return Err(NumericsError::Shape { op: "attention(q,k)", lhs: g.shape(q).to_vec(), rhs: g.shape(k).to_vec() });
    }
    if g.shape(k)[0] != g.shape(v)[0] {
        return Err(NumericsError::Shape { op: "attention(k,v)", lhs: g.shape(k).to_vec(), rhs: g.shape(v).to_vec() });
    }
    let gamma = (g.shape(v)[1] as f64).sqrt();
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / gamma);
    let weights = match mask {
        Some(m) => g.masked_softmax(scores, Rc::clone(m))?,
        None => g.softmax(scores, 1)?,
    };
    g.matmul(weights, v)
}

/// Head count and per-head key/value widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl AttentionDims {
    /// Even split of the model width across heads.
    pub fn split(d_model: usize, heads: usize) -> Result<Self, NumericsError> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(NumericsError::Config(format!("model dim {d_model} is not divisible by {heads} heads")));
        }
        Ok(Self { heads, d_k: d_model / heads, d_v: d_model / heads })
    }

    pub fn explicit(heads: usize, d_k: usize, d_v: usize) -> Result<Self, NumericsError> {
        if heads == 0 || d_k == 0 || d_v == 0 {
            return Err(NumericsError::Config("attention dims must be positive".into()));
        }
        Ok(Self { heads, d_k, d_v })
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub dims: AttentionDims,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, dims: AttentionDims, rng: &mut impl Rng) -> Self {
        let h = dims.heads;
        Self {
            query: Linear::new(store, &format!("{name}.q"), d_model, h * dims.d_k, false, rng),
            key: Linear::new(store, &format!("{name}.k"), d_model, h * dims.d_k, false, rng),
            value: Linear::new(store, &format!("{name}.v"), d_model, h * dims.d_v, false, rng),
            out: Linear::new(store, &format!("{name}.o"), h * dims.d_v, d_model, true, rng),
            dims,
        }
    }

    /// `queries: [n_q, d]`, `context: [n_k, d]` → `[n_q, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, queries: Var, context: Var, mask: Option<&Rc<Mask>>) -> Result<Var, NumericsError> {
        let AttentionDims { heads, d_k, d_v } = self.dims;
        let q = self.query.forward(g, p, queries)?;
        let k = self.key.forward(g, p, context)?;
        let v = self.value.forward(g, p, context)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = if heads == 1 { q } else { g.slice_cols(q, h * d_k, d_k)? };
            let kh = if heads == 1 { k } else { g.slice_cols(k, h * d_k, d_k)? };
            let vh = if heads == 1 { v } else { g.slice_cols(v, h * d_v, d_v)? };
            outs.push(attention(g, qh, kh, vh, mask)?);
        }
        let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.out.forward(g, p, joined)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, d_hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_model, d_hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), d_hidden, d_model, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// Pre-norm self-attention block:
/// `x + Attn(LN(x))`, then `+ MLP(LN(.))`.
#[derive(Clone, Debug)]
pub struct PrenormBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_mlp: LayerNorm,
    pub mlp: FeedForward,
}

impl PrenormBlock {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, dims: AttentionDims, d_hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, dims, rng),
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), d_model),
            mlp: FeedForward::new(store, &format!("{name}.mlp"), d_model, d_hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mask: Option<&Rc<Mask>>) -> Result<Var, NumericsError> {
        let h = self.ln_attn.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.ln_mlp.forward(g, p, x)?;
        let m = self.mlp.forward(g, p, h)?;
        g.add(x, m)
    }
}

/// Pre-norm cross-attention block: queries attend over a fixed context.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub ln_query: LayerNorm,
    pub ln_context: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_mlp: LayerNorm,
    pub mlp: FeedForward,
}

impl CrossAttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, dims: AttentionDims, d_hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            ln_query: LayerNorm::new(store, &format!("{name}.ln_query"), d_model),
            ln_context: LayerNorm::new(store, &format!("{name}.ln_context"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, dims, rng),
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), d_model),
            mlp: FeedForward::new(store, &format!("{name}.mlp"), d_model, d_hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, context: Var) -> Result<Var, NumericsError> {
        let q = self.ln_query.forward(g, p, x)?;
        let c = self.ln_context.forward(g, p, context)?;
        let a = self.attn.forward(g, p, q, c, None)?;
        let x = g.add(x, a)?;
        let h = self.ln_mlp.forward(g, p, x)?;
        let m = self.mlp.forward(g, p, h)?;
        g.add(x, m)
    }
}

/// Fixed sinusoidal position table `[len, d]`.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positive extents")
}

/// 2D grid positions: first half of the channels encode the row, second half the column.
pub fn sinusoidal_encoding_2d(rows: usize, cols: usize, d: usize) -> Tensor {
    let half = d / 2;
    let row_enc = sinusoidal_encoding(rows, half);
    let col_enc = sinusoidal_encoding(cols, d - half);
    let mut data = Vec::with_capacity(rows * cols * d);
    for r in 0..rows {
        for c in 0..cols {
            data.extend_from_slice(row_enc.row(r));
            data.extend_from_slice(col_enc.row(c));
        }
    }
    Tensor::new(vec![rows * cols, d], data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_key_returns_its_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let q = g.constant(random(&mut rng, 4, 3));
        let k = g.constant(random(&mut rng, 1, 3));
        let v = g.constant(random(&mut rng, 1, 5));
        let out = attention(&mut g, q, k, v, None).unwrap();
        let vrow = g.value(v).row(0).to_vec();
        for r in 0..4 {
            for (a, b) in g.value(out).row(r).iter().zip(&vrow) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn masking_all_but_one_column_selects_that_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let q = g.constant(random(&mut rng, 3, 4));
        let k = g.constant(random(&mut rng, 5, 4));
        let v = g.constant(random(&mut rng, 5, 2));
        let j = 3;
        let allowed = (0..15).map(|idx| idx % 5 == j).collect();
        let mask = Rc::new(Mask::new(3, 5, allowed).unwrap());
        let out = attention(&mut g, q, k, v, Some(&mask)).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(out).row(r), g.value(v).row(j));
        }
    }

    #[test]
    fn causal_weights_are_exactly_zero_above_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, 6, 6));
        let w = g.masked_softmax(x, Rc::new(Mask::causal(6))).unwrap();
        for i in 0..6 {
            let row = g.value(w).row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, v) in row.iter().enumerate() {
                if j > i {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn scaling_uses_value_width() {
        // Q Kᵀ = 16 * I-ish scores; with d_v = 256, gamma = 16 so the scaled score is exactly 1.
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![4.0, 0.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![4.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let mut vrows = vec![vec![0.0; 256], vec![0.0; 256]];
        vrows[0][0] = 1.0;
        let v = g.constant(Tensor::from_rows(&vrows).unwrap());
        let out = attention(&mut g, q, k, v, None).unwrap();
        let e = 1f64.exp();
        assert!((g.value(out).at(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn indivisible_head_split_is_a_config_error() {
        assert!(matches!(AttentionDims::split(64, 3), Err(NumericsError::Config(_))));
        assert_eq!(AttentionDims::split(64, 4).unwrap().d_k, 16);
    }

    #[test]
    fn one_head_identity_projections_reduce_to_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 5;
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", d, AttentionDims::split(d, 1).unwrap(), &mut rng);
        for lin in [&mha.query, &mha.key, &mha.value, &mha.out] {
            *store.get_mut(lin.weight) = Tensor::identity(d);
        }
        let xq = random(&mut rng, 3, d);
        let xk = random(&mut rng, 4, d);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let q = g.constant(xq);
        let k = g.constant(xk);
        let out = mha.forward(&mut g, &p, q, k, None).unwrap();
        let direct = attention(&mut g, q, k, k, None).unwrap();
        for (a, b) in g.value(out).data().iter().zip(g.value(direct).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn output_shape_matches_queries_for_any_dividing_head_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for heads in [1, 2, 3, 4, 6, 12] {
            let mut store = ParamStore::new();
            let mha = MultiHeadAttention::new(&mut store, "m", 12, AttentionDims::split(12, heads).unwrap(), &mut rng);
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let x = g.constant(random(&mut rng, 7, 12));
            let out = mha.forward(&mut g, &p, x, x, None).unwrap();
            assert_eq!(g.shape(out), &[7, 12]);
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let block = PrenormBlock::new(&mut store, "b", 6, AttentionDims::split(6, 2).unwrap(), 12, &mut rng);
        for t in store.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xt = random(&mut rng, 4, 6);
        let x = g.constant(xt.clone());
        let y = block.forward(&mut g, &p, x, Some(&Rc::new(Mask::causal(4)))).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn layernorm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 8], 3.5));
        let gamma = g.constant(Tensor::full(&[8], 1.0));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn positional_tables_have_expected_shape() {
        assert_eq!(sinusoidal_encoding(10, 8).shape(), &[10, 8]);
        let t = sinusoidal_encoding_2d(4, 4, 16);
        assert_eq!(t.shape(), &[16, 16]);
        assert_ne!(t.row(1), t.row(4));
    }
}
