use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env2d::{Config2D, Costmap};
use crate::numerics::nn::{
    sinusoidal_encoding, sinusoidal_encoding_2d, AttentionDims, CrossAttentionBlock, LayerNorm, Linear, PrenormBlock,
};
use crate::numerics::{Bound, Graph, Mask, NumericsError, ParamStore, Tensor, Var};
use crate::stage1::{check_layout, Codebook, STATE_DIM};

/// Architecture and decoding settings of the index predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub d_model: usize,
    pub patch: usize,
    pub resolution: usize,
    pub cross_layers: usize,
    pub ar_layers: usize,
    pub heads: usize,
    pub d_k: Option<usize>,
    pub d_v: Option<usize>,
    pub mlp_hidden: usize,
    pub embed_hidden: usize,
    /// Dictionary size `N`; the goal class is `N`.
    pub codes: usize,
    pub d_factor: usize,
    pub beam_width: usize,
    /// Longest predicted sequence, goal class included.
    pub max_len: usize,
    pub side: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            d_model: 64,
            patch: 8,
            resolution: 64,
            cross_layers: 3,
            ar_layers: 3,
            heads: 3,
            d_k: Some(64),
            d_v: Some(32),
            mlp_hidden: 128,
            embed_hidden: 64,
            codes: 32,
            d_factor: 8,
            beam_width: 4,
            max_len: 12,
            side: 1.0,
        }
    }
}

impl Stage2Config {
    pub fn attention_dims(&self) -> Result<AttentionDims, NumericsError> {
        match (self.d_k, self.d_v) {
            (Some(k), Some(v)) => AttentionDims::explicit(self.heads, k, v),
            (None, None) => AttentionDims::split(self.d_model, self.heads),
            _ => Err(NumericsError::Config("d_k and d_v must be given together".into())),
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        self.attention_dims()?;
        if self.patch == 0 || !self.resolution.is_multiple_of(self.patch) {
            return Err(NumericsError::Config(format!(
                "costmap resolution {} is not divisible by patch size {}",
                self.resolution, self.patch
            )));
        }
        if self.codes < 2 || self.d_factor == 0 || self.max_len < 2 || self.beam_width == 0 || !(self.side > 0.0) {
            return Err(NumericsError::Config("need N >= 2, d_factor > 0, max_len >= 2, beam width >= 1".into()));
        }
        if self.cross_layers == 0 || self.ar_layers == 0 {
            return Err(NumericsError::Config("layer counts must be positive".into()));
        }
        Ok(())
    }

    /// Number of environment tokens.
    pub fn env_tokens(&self) -> usize {
        let g = self.resolution / self.patch;
        g * g
    }

    pub fn goal_class(&self) -> usize {
        self.codes
    }
}

/// Costmap patch encoder, start/goal cross-attention and the autoregressive index decoder.
#[derive(Clone, Debug)]
pub struct Stage2Model {
    pub config: Stage2Config,
    pub store: ParamStore,
    patch_proj: Linear,
    embed1: Linear,
    embed2: Linear,
    cross: Vec<CrossAttentionBlock>,
    roles: crate::numerics::ParamId,
    bos: Linear,
    code_embed: Linear,
    blocks: Vec<PrenormBlock>,
    final_norm: LayerNorm,
    head: Linear,
}

impl Stage2Model {
    pub fn new<R: Rng + ?Sized>(config: Stage2Config, rng: &mut R) -> Result<Self, NumericsError> {
        config.validate()?;
        let dims = config.attention_dims()?;
        let d = config.d_model;
        let mut rng = rng;
        let mut store = ParamStore::new();
        let p2 = config.patch * config.patch;
        let patch_proj = Linear::new(&mut store, "env.patch", p2, d, true, &mut rng);
        let embed1 = Linear::new(&mut store, "query.fc1", STATE_DIM, config.embed_hidden, true, &mut rng);
        let embed2 = Linear::new(&mut store, "query.fc2", config.embed_hidden, d, true, &mut rng);
        let cross = (0..config.cross_layers)
            .map(|i| CrossAttentionBlock::new(&mut store, &format!("cross.block{i}"), d, dims, config.mlp_hidden, &mut rng))
            .collect();
        let roles = store.add_glorot("ar.roles", 2, d, &mut rng);
        let bos = Linear::new(&mut store, "ar.bos", d, d, true, &mut rng);
        let code_embed = Linear::new(&mut store, "ar.code_embed", config.d_factor, d, true, &mut rng);
        let blocks = (0..config.ar_layers)
            .map(|i| PrenormBlock::new(&mut store, &format!("ar.block{i}"), d, dims, config.mlp_hidden, &mut rng))
            .collect();
        let final_norm = LayerNorm::new(&mut store, "ar.final_norm", d);
        let head = Linear::new(&mut store, "ar.head", d, config.codes + 1, true, &mut rng);
        Ok(Self { config, store, patch_proj, embed1, embed2, cross, roles, bos, code_embed, blocks, final_norm, head })
    }

    pub fn from_store(config: Stage2Config, store: ParamStore) -> Result<Self, NumericsError> {
        let mut model = Self::new(config, &mut crate::env2d::seeded_rng(0))?;
        check_layout(&model.store, &store)?;
        model.store = store;
        Ok(model)
    }

    pub fn patches(&self, costmap: &Costmap) -> Result<Tensor, NumericsError> {
        costmap_patches(&self.config, costmap)
    }

    /// Environment tokens `E`, `[n_e, d]`.
    pub fn embed_environment(&self, g: &mut Graph, p: &Bound, patches: &Tensor) -> Result<Var, NumericsError> {
        let x = g.constant(patches.clone());
        let e = self.patch_proj.forward(g, p, x)?;
        let grid = self.config.resolution / self.config.patch;
        let pe = g.constant(sinusoidal_encoding_2d(grid, grid, self.config.d_model));
        g.add(e, pe)
    }

    /// Shared embedding of start and goal, `[2, d]` (start row first).
    pub fn embed_queries(&self, g: &mut Graph, p: &Bound, start: Config2D, goal: Config2D) -> Result<Var, NumericsError> {
        let s = self.config.side;
        let pts = Tensor::new(vec![2, 2], vec![start.x / s - 0.5, start.y / s - 0.5, goal.x / s - 0.5, goal.y / s - 0.5])?;
        let x = g.constant(pts);
        let h = self.embed1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.embed2.forward(g, p, h)
    }

    /// Start and goal embeddings after attending over `env`, `[2, d]`.
    pub fn fuse_queries(&self, g: &mut Graph, p: &Bound, queries: Var, env: Var) -> Result<Var, NumericsError> {
        let mut x = queries;
        for b in &self.cross {
            x = b.forward(g, p, x, env)?;
        }
        Ok(x)
    }

    /// Planning context `M = [E; M_s; M_g]`, `[n_e + 2, d]`.
    pub fn context(&self, g: &mut Graph, p: &Bound, patches: &Tensor, start: Config2D, goal: Config2D) -> Result<Var, NumericsError> {
        let env = self.embed_environment(g, p, patches)?;
        let q = self.embed_queries(g, p, start, goal)?;
        let fused = self.fuse_queries(g, p, q, env)?;
        g.concat_rows(&[env, fused])
    }

    /// Logits `[len(prefix) + 1, N + 1]`: row `j` predicts `h_{j+1}` from `prefix[..j]`.
    pub fn ar_logits(&self, g: &mut Graph, p: &Bound, codebook: &Codebook, context: Var, prefix: &[usize]) -> Result<Var, NumericsError> {
        let goal = self.config.goal_class();
        if let Some(&bad) = prefix.iter().find(|&&h| h >= goal) {
            return Err(NumericsError::Domain(format!("prefix contains class {bad}, codes are 0..{goal}")));
        }
        if codebook.size() != self.config.codes || codebook.factor_dim() != self.config.d_factor {
            return Err(NumericsError::Config("codebook does not match the model".into()));
        }
        let d = self.config.d_model;
        let n_ctx = g.shape(context)[0];
        let env = g.gather_rows(context, &(0..n_ctx - 2).collect::<Vec<_>>())?;
        let fused = g.gather_rows(context, &[n_ctx - 2, n_ctx - 1])?;
        let fused = g.add(fused, p.var(self.roles))?;
        let start = g.constant(Tensor::new(vec![1, d], codebook.start.data().to_vec())?);
        let mut seq = vec![self.bos.forward(g, p, start)?];
        if !prefix.is_empty() {
            let codes = g.constant(codebook.codes.clone());
            let picked = g.gather_rows(codes, prefix)?;
            seq.push(self.code_embed.forward(g, p, picked)?);
        }
        let seq = g.concat_rows(&seq)?;
        let pe = g.constant(sinusoidal_encoding(prefix.len() + 1, d));
        let seq = g.add(seq, pe)?;
        let x = g.concat_rows(&[env, fused, seq])?;
        let total = g.shape(x)[0];
        let mask = Rc::new(Mask::prefix_causal(n_ctx, total));
        let mut x = x;
        for b in &self.blocks {
            x = b.forward(g, p, x, Some(&mask))?;
        }
        let x = self.final_norm.forward(g, p, x)?;
        let tail = g.gather_rows(x, &(n_ctx..total).collect::<Vec<_>>())?;
        self.head.forward(g, p, tail)
    }

    /// Teacher-forced cross-entropy summed over the sequence. `targets` must end with the goal class.
    pub fn ce_loss(&self, g: &mut Graph, p: &Bound, codebook: &Codebook, context: Var, targets: &[usize]) -> Result<(Var, Var), NumericsError> {
        if targets.last() != Some(&self.config.goal_class()) {
            return Err(NumericsError::Domain("target sequence must end with the goal class".into()));
        }
        let logits = self.ar_logits(g, p, codebook, context, &targets[..targets.len() - 1])?;
        Ok((g.cross_entropy(logits, targets)?, logits))
    }

    /// Context tensor for one problem, computed without gradients.
    pub fn context_value(&self, costmap: &Costmap, start: Config2D, goal: Config2D) -> Result<Tensor, NumericsError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let patches = self.patches(costmap)?;
        let m = self.context(&mut g, &p, &patches, start, goal)?;
        Ok(g.value(m).clone())
    }

    /// Next-class distribution after `prefix` given a precomputed context.
    pub fn ar_forward(&self, codebook: &Codebook, context: &Tensor, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
        let logits = self.last_logits(codebook, context, prefix)?;
        let lse = log_sum_exp(&logits);
        Ok(logits.iter().map(|l| (l - lse).exp()).collect())
    }

    pub fn next_log_probs(&self, codebook: &Codebook, context: &Tensor, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
        let logits = self.last_logits(codebook, context, prefix)?;
        let lse = log_sum_exp(&logits);
        Ok(logits.iter().map(|l| l - lse).collect())
    }

    fn last_logits(&self, codebook: &Codebook, context: &Tensor, prefix: &[usize]) -> Result<Vec<f64>, NumericsError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let m = g.constant(context.clone());
        let logits = self.ar_logits(&mut g, &p, codebook, m, prefix)?;
        let v = g.value(logits);
        Ok(v.row(v.rows() - 1).to_vec())
    }
}

/// Flattened `p x p` patches in row-major patch order, `[n_e, p²]`.
pub fn costmap_patches(config: &Stage2Config, costmap: &Costmap) -> Result<Tensor, NumericsError> {
    let (r, p) = (costmap.resolution, config.patch);
    if r != config.resolution {
        return Err(NumericsError::Config(format!("costmap resolution {r}, model expects {}", config.resolution)));
    }
    let grid = r / p;
    let mut data = Vec::with_capacity(r * r);
    for pr in 0..grid {
        for pc in 0..grid {
            for i in 0..p {
                for j in 0..p {
                    data.push(costmap.get(pr * p + i, pc * p + j) as f64);
                }
            }
        }
    }
    Tensor::new(vec![grid * grid, p * p], data)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
