use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CodeToken, Codebook};
use crate::env2d::Config2D;
use crate::numerics::nn::{sinusoidal_encoding, AttentionDims, LayerNorm, Linear, PrenormBlock};
use crate::numerics::{Bound, GaussianParams, Graph, NllPairing, NumericsError, ParamStore, Tensor, Var};

/// Architecture and loss settings of the trajectory autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub d_model: usize,
    pub d_factor: usize,
    pub codes: usize,
    pub layers: usize,
    pub heads: usize,
    /// Per-head query/key width; `None` splits `d_model` evenly.
    pub d_k: Option<usize>,
    pub d_v: Option<usize>,
    pub mlp_hidden: usize,
    pub decoder_hidden: usize,
    pub diag_floor: f64,
    pub beta: f64,
    pub lambda: f64,
    pub entropy_samples: usize,
    pub side: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_factor: 8,
            codes: 32,
            layers: 3,
            heads: 3,
            d_k: Some(64),
            d_v: Some(32),
            mlp_hidden: 128,
            decoder_hidden: 64,
            diag_floor: 1e-4,
            beta: 0.25,
            lambda: 0.01,
            entropy_samples: 256,
            side: 1.0,
        }
    }
}

impl Stage1Config {
    pub fn attention_dims(&self) -> Result<AttentionDims, NumericsError> {
        match (self.d_k, self.d_v) {
            (Some(k), Some(v)) => AttentionDims::explicit(self.heads, k, v),
            (None, None) => AttentionDims::split(self.d_model, self.heads),
            _ => Err(NumericsError::Config("d_k and d_v must be given together".into())),
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        self.attention_dims()?;
        let bad = |m: &str| Err(NumericsError::Config(m.to_string()));
        if self.codes < 2 || self.d_factor == 0 || self.d_factor >= self.d_model {
            return bad("need N >= 2 and 0 < d_factor < d_model");
        }
        if self.layers == 0 || self.mlp_hidden == 0 || self.decoder_hidden == 0 {
            return bad("layer and hidden sizes must be positive");
        }
        if !(self.diag_floor > 0.0) || !(self.beta > 0.0) || !(self.lambda >= 0.0) || !(self.side > 0.0) {
            return bad("diag_floor, beta and side must be positive, lambda nonnegative");
        }
        Ok(())
    }
}

/// Planning-space dimension of the point robot.
pub const STATE_DIM: usize = 2;

/// Encoder, factorizing projection and Gaussian decoder. Parameters live in `store`;
/// the codebook is kept separately because it has its own optimizer state.
#[derive(Clone, Debug)]
pub struct Stage1Model {
    pub config: Stage1Config,
    pub store: ParamStore,
    input: Linear,
    blocks: Vec<PrenormBlock>,
    final_norm: LayerNorm,
    factor: Linear,
    dec1: Linear,
    dec2: Linear,
    head_mu: Linear,
    head_lower: Linear,
    head_diag: Linear,
    /// Module ids below this index belong to the encoder side (input to factor projection).
    encoder_params: usize,
}

/// Per-step Gaussian parameters as graph variables (normalized coordinates).
pub struct DecodedVars {
    pub mu: Var,
    pub lower: Var,
    pub diag: Var,
}

/// Graph variables for the loss pieces of one trajectory.
pub struct VqTerms {
    pub indices: Vec<usize>,
    /// Σ_j NLL(q_j).
    pub nll: Var,
    /// Σ_j mean over entropy samples of NLL(u).
    pub entropy: Option<Var>,
    pub recon: Var,
    /// mean_j ‖sg[z_j] − ẑ_j‖².
    pub codebook: Var,
    /// mean_j ‖z_j − sg[ẑ_j]‖² (unweighted).
    pub commitment: Var,
    pub total: Var,
    pub normalized: Var,
}

impl Stage1Model {
    pub fn new<R: Rng + ?Sized>(config: Stage1Config, rng: &mut R) -> Result<Self, NumericsError> {
        config.validate()?;
        let dims = config.attention_dims()?;
        let d = config.d_model;
        let mut rng = rng;
        let mut store = ParamStore::new();
        let input = Linear::new(&mut store, "enc.input", STATE_DIM, d, true, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| PrenormBlock::new(&mut store, &format!("enc.block{i}"), d, dims, config.mlp_hidden, &mut rng))
            .collect();
        let final_norm = LayerNorm::new(&mut store, "enc.final_norm", d);
        let factor = Linear::new(&mut store, "enc.factor", d, config.d_factor, true, &mut rng);
        let encoder_params = store.len();
        let h = config.decoder_hidden;
        let dec1 = Linear::new(&mut store, "dec.fc1", config.d_factor, h, true, &mut rng);
        let dec2 = Linear::new(&mut store, "dec.fc2", h, h, true, &mut rng);
        let head_mu = Linear::new(&mut store, "dec.mu", h, STATE_DIM, true, &mut rng);
        let head_lower = Linear::new(&mut store, "dec.lower", h, STATE_DIM * (STATE_DIM - 1) / 2, true, &mut rng);
        let head_diag = Linear::new(&mut store, "dec.diag", h, STATE_DIM, true, &mut rng);
        // Start the means in the middle of the workspace.
        if let Some(b) = head_mu.bias {
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.5);
        }
        Ok(Self { config, store, input, blocks, final_norm, factor, dec1, dec2, head_mu, head_lower, head_diag, encoder_params })
    }

    /// Rebuilds the module layout for `config` and adopts `store`, which must match it
    /// name for name and shape for shape.
    pub fn from_store(config: Stage1Config, store: ParamStore) -> Result<Self, NumericsError> {
        let mut model = Self::new(config, &mut crate::env2d::seeded_rng(0))?;
        check_layout(&model.store, &store)?;
        model.store = store;
        Ok(model)
    }

    pub fn is_encoder_param(&self, index: usize) -> bool {
        index < self.encoder_params
    }

    fn normalize_points(&self, traj: &[Config2D]) -> Result<Tensor, NumericsError> {
        let s = self.config.side;
        Tensor::new(vec![traj.len(), STATE_DIM], traj.iter().flat_map(|q| [q.x / s, q.y / s]).collect())
    }

    /// Latent sequence `[n_s, d]`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, traj: &[Config2D]) -> Result<Var, NumericsError> {
        if traj.is_empty() {
            return Err(NumericsError::Domain("cannot encode an empty trajectory".into()));
        }
        if traj.iter().any(|q| !q.is_finite()) {
            return Err(NumericsError::Domain("trajectory has non-finite waypoints".into()));
        }
        // centred inputs
        let mut pts = self.normalize_points(traj)?;
        pts.data_mut().iter_mut().for_each(|v| *v -= 0.5);
        let x = g.constant(pts);
        let x = self.input.forward(g, p, x)?;
        let pe = g.constant(sinusoidal_encoding(traj.len(), self.config.d_model));
        let mut x = g.add(x, pe)?;
        for b in &self.blocks {
            x = b.forward(g, p, x, None)?;
        }
        self.final_norm.forward(g, p, x)
    }

    /// Factorized and l2-normalized encodings `[n_s, d_f]`.
    pub fn factorize(&self, g: &mut Graph, p: &Bound, latent: Var) -> Result<Var, NumericsError> {
        let f = self.factor.forward(g, p, latent)?;
        g.l2_normalize(f)
    }

    /// Decoder heads for a batch of codes `[k, d_f]`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, codes: Var) -> Result<DecodedVars, NumericsError> {
        let h = self.dec1.forward(g, p, codes)?;
        let h = g.gelu(h);
        let h = self.dec2.forward(g, p, h)?;
        let h = g.gelu(h);
        let mu = self.head_mu.forward(g, p, h)?;
        let lower = self.head_lower.forward(g, p, h)?;
        let raw = self.head_diag.forward(g, p, h)?;
        let sp = g.softplus(raw);
        let diag = g.add_scalar(sp, self.config.diag_floor);
        Ok(DecodedVars { mu, lower, diag })
    }

    /// Gaussian in workspace coordinates for one code vector.
    pub fn decode_to_gaussian(&self, code: &[f64]) -> Result<GaussianParams, NumericsError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let c = g.constant(Tensor::new(vec![1, code.len()], code.to_vec())?);
        let out = self.decode(&mut g, &p, c)?;
        let s = self.config.side;
        let mean = g.value(out.mu).data().iter().map(|v| v * s).collect();
        let lower = g.value(out.lower).data().to_vec();
        let diag = g.value(out.diag).data().iter().map(|v| v * s * s).collect();
        GaussianParams::new(mean, lower, diag)
    }

    /// Builds every loss piece for one trajectory on `g`.
    ///
    /// `codes` is the codebook bound on the same graph. `entropy_points` are
    /// workspace-uniform draws in normalized coordinates, `[m, 2]`.
    pub fn vq_terms(
        &self,
        g: &mut Graph,
        p: &Bound,
        codebook: &Codebook,
        codes: Var,
        traj: &[Config2D],
        entropy_points: Option<&Tensor>,
    ) -> Result<VqTerms, NumericsError> {
        let n = traj.len();
        let latent = self.encode(g, p, traj)?;
        let z = self.factorize(g, p, latent)?;
        let indices = quantize_rows(codebook, g.value(z))?;
        let zq = g.gather_rows(codes, &indices)?;

        let z_sg = g.stop_gradient(z);
        let diff = g.sub(z_sg, zq)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum(sq);
        let codebook_term = g.scale(s, 1.0 / n as f64);

        let zq_sg = g.stop_gradient(zq);
        let diff = g.sub(z, zq_sg)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum(sq);
        let commitment = g.scale(s, 1.0 / n as f64);

        let st = g.straight_through(z, g.value(zq).clone())?;
        let dec = self.decode(g, p, st)?;
        let pts = g.constant(self.normalize_points(traj)?);
        let nll = g.gaussian_nll(dec.mu, dec.lower, dec.diag, pts, NllPairing::Paired)?;
        let nll = g.sum(nll);

        let (recon, entropy) = match entropy_points {
            Some(u) if self.config.lambda > 0.0 && u.rows() > 0 => {
                let u = g.constant(u.clone());
                let cross = g.gaussian_nll(dec.mu, dec.lower, dec.diag, u, NllPairing::Cross)?;
                let m = g.shape(cross)[1] as f64;
                let e = g.sum(cross);
                let e = g.scale(e, 1.0 / m);
                let weighted = g.scale(e, -self.config.lambda);
                (g.add(nll, weighted)?, Some(e))
            }
            _ => (nll, None),
        };
        let commit_w = g.scale(commitment, self.config.beta);
        let vq = g.add(codebook_term, commit_w)?;
        let total = g.add(recon, vq)?;
        Ok(VqTerms { indices, nll, entropy, recon, codebook: codebook_term, commitment, total, normalized: z })
    }

    /// Per-step code indices and the wrapped token sequence `[Start, Code.., Goal]`.
    pub fn transduce(&self, codebook: &Codebook, traj: &[Config2D]) -> Result<(Vec<usize>, Vec<CodeToken>), NumericsError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let latent = self.encode(&mut g, &p, traj)?;
        let z = self.factorize(&mut g, &p, latent)?;
        let indices = quantize_rows(codebook, g.value(z))?;
        let mut tokens = Vec::with_capacity(indices.len() + 2);
        tokens.push(CodeToken::Start);
        tokens.extend(indices.iter().map(|&i| CodeToken::Code(i)));
        tokens.push(CodeToken::Goal);
        Ok((indices, tokens))
    }

    /// Mean per-waypoint NLL in normalized coordinates, without any regularizer.
    pub fn mean_nll(&self, codebook: &Codebook, trajs: &[Vec<Config2D>]) -> Result<f64, NumericsError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for t in trajs {
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let codes = g.constant(codebook.codes.clone());
            let terms = self.vq_terms(&mut g, &p, codebook, codes, t, None)?;
            total += g.scalar(terms.nll);
            count += t.len();
        }
        if count == 0 {
            return Err(NumericsError::Domain("no waypoints to score".into()));
        }
        Ok(total / count as f64)
    }
}

pub(crate) fn quantize_rows(codebook: &Codebook, z: &Tensor) -> Result<Vec<usize>, NumericsError> {
    (0..z.rows()).map(|i| codebook.quantize(z.row(i))).collect()
}

pub(crate) fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<(), NumericsError> {
    if expected.len() != got.len() {
        return Err(NumericsError::Config(format!("expected {} parameter arrays, found {}", expected.len(), got.len())));
    }
    for ((en, et), (gn, gt)) in expected.iter().zip(got.iter()) {
        if en != gn || et.shape() != gt.shape() {
            return Err(NumericsError::Shape { op: "parameter layout", lhs: et.shape().to_vec(), rhs: gt.shape().to_vec() });
        }
    }
    Ok(())
}
