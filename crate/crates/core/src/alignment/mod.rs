//! Per-modality adapters, the Gaussian embedding head, the distance between
//! embeddings, and the unsupervised contrastive loss over modality pairs.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::numcore::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::numcore::{Graph, ParamStore, Rng, Tensor, Var};

pub const TAU: &str = "align.tau";
pub const SCALE_RAW: &str = "align.a_raw";

pub const TAU_INIT: f64 = 0.07;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 0.5;

/// The modality pairs that enter the contrastive loss.
pub const PAIRS: [(Modality, Modality); 3] = [
    (Modality::Speech, Modality::Text),
    (Modality::Text, Modality::Video),
    (Modality::Speech, Modality::Video),
];

/// Diagonal Gaussian embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEmb {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianEmb {
    pub fn new(mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mu.len() != var.len() {
            return Err(Error::shape(format!(
                "mu has {} dims, var {}",
                mu.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::arg("variances must be positive"));
        }
        Ok(Self { mu, var })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Feature MLP, self-attention with residual, mean-pool, mean and
/// log-variance heads.
const HEAD_GAIN: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Umc {
    pub mlp: Mlp,
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub mu: Linear,
    pub logvar: Linear,
}

#[derive(Clone, Debug)]
pub struct Alignment {
    pub adapters: [Mlp; 3],
    pub umc: Umc,
    pub width: usize,
    pub emb_dim: usize,
    /// Additive shift of the similarity map. The contrastive loss is
    /// invariant to it, so it is a fixed setting rather than a weight.
    pub shift: f64,
}

impl Alignment {
    /// `dims` are the raw feature widths, `width` the shared width after
    /// the adapters.
    pub fn new(dims: [usize; 3], width: usize, emb_dim: usize, heads: usize) -> Result<Self> {
        if width == 0 || emb_dim == 0 || dims.contains(&0) {
            return Err(Error::Config("alignment sizes must be positive".into()));
        }
        let adapters =
            Modality::ALL.map(|m| Mlp::new(&format!("adapter.{m}"), dims[m.index()], width, width));
        let umc = Umc {
            mlp: Mlp::new("umc.mlp", width, width, width),
            norm: LayerNorm::new("umc.norm", width),
            attn: MultiHeadAttention::new("umc.attn", width, heads)
                .map_err(|e| Error::Config(e.to_string()))?,
            // A bias shared by every mean cancels in every distance.
            mu: Linear::without_bias("umc.mu", width, emb_dim),
            logvar: Linear::new("umc.logvar", width, emb_dim),
        };
        Ok(Self {
            adapters,
            umc,
            width,
            emb_dim,
            shift: 0.0,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for a in &self.adapters {
            a.init(store, rng);
        }
        self.umc.mlp.init(store, rng);
        self.umc.norm.init(store);
        self.umc.attn.init(store, rng);
        // Small heads keep early distances near 1, so the contrastive logits
        // start in the range a cosine similarity would give.
        self.umc.mu.init_scaled(store, rng, HEAD_GAIN);
        self.umc.logvar.init_scaled(store, rng, HEAD_GAIN);
        store.insert(TAU, Tensor::scalar(TAU_INIT));
        // softplus(ln(e - 1)) = 1, so the effective scale starts at -1.
        store.insert(SCALE_RAW, Tensor::scalar((std::f64::consts::E - 1.0).ln()));
    }

    /// Raw `T x d_m` frames to `T x width`.
    pub fn adapt(&self, g: &mut Graph<'_>, m: Modality, x: Var) -> Result<Var> {
        let (t, d) = g.value(x).dims();
        let adapter = &self.adapters[m.index()];
        if t == 0 {
            return Err(Error::arg(format!("modality {m} has no frames")));
        }
        if d != adapter.l1.d_in {
            return Err(Error::shape(format!(
                "modality {m} width {d}, expected {}",
                adapter.l1.d_in
            )));
        }
        adapter.forward(g, x)
    }

    /// Adapted `T x width` sequence to `(mu, logvar)`, each `1 x emb_dim`.
    pub fn umc(&self, g: &mut Graph<'_>, h: Var) -> Result<(Var, Var)> {
        let u = &self.umc;
        let h = u.mlp.forward(g, h)?;
        let h = u.norm.forward(g, h)?;
        let a = u.attn.forward(g, h, h, h)?;
        let h = g.add(h, a)?;
        let pooled = g.mean_rows(h);
        Ok((u.mu.forward(g, pooled)?, u.logvar.forward(g, pooled)?))
    }

    /// Learned temperature and the effective `(a, b)` of the similarity map.
    pub fn scalars(&self, g: &mut Graph<'_>) -> Result<(Var, Var, Var)> {
        let tau = g.param(TAU)?;
        let raw = g.param(SCALE_RAW)?;
        let sp = g.softplus(raw);
        let a = g.neg(sp);
        let b = g.scalar(self.shift);
        Ok((tau, a, b))
    }
}

/// Runs adapter and head on one raw sequence.
pub fn umc_forward(
    features: &Tensor,
    m: Modality,
    align: &Alignment,
    params: &ParamStore,
) -> Result<GaussianEmb> {
    let mut g = Graph::new(params);
    let x = g.constant(features.clone());
    let h = align.adapt(&mut g, m, x)?;
    let (mu, logvar) = align.umc(&mut g, h)?;
    let var = g.exp(logvar);
    GaussianEmb::new(g.value(mu).data().to_vec(), g.value(var).data().to_vec())
}

/// Keeps the temperature inside its allowed range.
pub fn clamp_tau(store: &mut ParamStore) {
    if let Some(t) = store.get_mut(TAU) {
        for v in t.data_mut() {
            *v = v.clamp(TAU_MIN, TAU_MAX);
        }
    }
}

/// `||mu1 - mu2||^2 + ||var1 - var2||^2`.
pub fn wasserstein2(g1: &GaussianEmb, g2: &GaussianEmb) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::shape(format!(
            "embedding dims {} vs {}",
            g1.dim(),
            g2.dim()
        )));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok(sq(&g1.mu, &g2.mu) + sq(&g1.var, &g2.var))
}

pub fn similarity(g1: &GaussianEmb, g2: &GaussianEmb, a: f64, b: f64) -> Result<f64> {
    Ok(a * wasserstein2(g1, g2)? + b)
}

/// Rows of `mu` and `var` (`N x d`) for a batch of embeddings, on the graph.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBatch {
    pub mu: Var,
    pub var: Var,
}

impl GaussianBatch {
    pub fn constant(g: &mut Graph<'_>, embs: &[GaussianEmb]) -> Result<Self> {
        let d = embs
            .first()
            .map(GaussianEmb::dim)
            .ok_or_else(|| Error::arg("empty embedding batch"))?;
        if embs.iter().any(|e| e.dim() != d) {
            return Err(Error::shape("embedding dims differ within a batch"));
        }
        let mu = Tensor::matrix(
            embs.len(),
            d,
            embs.iter().flat_map(|e| e.mu.clone()).collect(),
        )?;
        let var = Tensor::matrix(
            embs.len(),
            d,
            embs.iter().flat_map(|e| e.var.clone()).collect(),
        )?;
        Ok(Self {
            mu: g.constant(mu),
            var: g.constant(var),
        })
    }
}

/// `N x N` matrix of `a * W2(A_i, B_j) + b`.
pub fn similarity_matrix(
    g: &mut Graph<'_>,
    x: GaussianBatch,
    y: GaussianBatch,
    a: Var,
    b: Var,
) -> Result<Var> {
    let dm = g.sq_dist(x.mu, y.mu)?;
    let dv = g.sq_dist(x.var, y.var)?;
    let d = g.add(dm, dv)?;
    let s = g.mul_scalar_var(d, a)?;
    g.add_scalar_var(s, b)
}

/// Symmetric InfoNCE on an `N x N` similarity matrix whose diagonal holds
/// the matched pairs. Each direction is averaged over its anchors.
pub fn infonce_from_similarity(g: &mut Graph<'_>, sim: Var, tau: Var) -> Result<Var> {
    let (n, m) = g.value(sim).dims();
    if n != m {
        return Err(Error::arg(format!(
            "similarity matrix is {n}x{m}, expected square"
        )));
    }
    let inv_tau = g.recip(tau);
    let logits = g.mul_scalar_var(sim, inv_tau)?;
    let diag: Vec<usize> = (0..n).collect();
    let mut total = None;
    for l in [logits, g.transpose(logits)] {
        let lsm = g.log_softmax_rows(l, None)?;
        let picked = g.pick(lsm, &diag)?;
        let mean = g.mean(picked);
        let term = g.neg(mean);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap())
}

pub fn infonce_graph(
    g: &mut Graph<'_>,
    x: GaussianBatch,
    y: GaussianBatch,
    tau: Var,
    a: Var,
    b: Var,
) -> Result<Var> {
    let (nx, ny) = (g.value(x.mu).rows(), g.value(y.mu).rows());
    if nx != ny {
        return Err(Error::arg(format!(
            "pair batches differ in size: {nx} vs {ny}"
        )));
    }
    let s = similarity_matrix(g, x, y, a, b)?;
    infonce_from_similarity(g, s, tau)
}

/// Cosine-similarity InfoNCE over point embeddings (`N x d` rows).
pub fn point_infonce_graph(g: &mut Graph<'_>, x: Var, y: Var, tau: Var) -> Result<Var> {
    let (nx, ny) = (g.value(x).rows(), g.value(y).rows());
    if nx != ny {
        return Err(Error::arg(format!(
            "pair batches differ in size: {nx} vs {ny}"
        )));
    }
    let xn = g.normalize_rows(x);
    let yn = g.normalize_rows(y);
    let yt = g.transpose(yn);
    let s = g.matmul(xn, yt)?;
    infonce_from_similarity(g, s, tau)
}

/// Sum of the pair losses over [`PAIRS`]. `embs` is indexed by modality.
pub fn udcl_graph(
    g: &mut Graph<'_>,
    embs: &[GaussianBatch; 3],
    tau: Var,
    a: Var,
    b: Var,
) -> Result<Var> {
    let mut total = None;
    for (p, q) in PAIRS {
        let l = infonce_graph(g, embs[p.index()], embs[q.index()], tau, a, b)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    Ok(total.unwrap())
}

pub fn infonce_pair_loss(
    x: &[GaussianEmb],
    y: &[GaussianEmb],
    tau: f64,
    a: f64,
    b: f64,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg(format!(
            "pair batches differ in size: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut g = Graph::without_params();
    let (xb, yb) = (
        GaussianBatch::constant(&mut g, x)?,
        GaussianBatch::constant(&mut g, y)?,
    );
    let (tau, a, b) = (g.scalar(tau), g.scalar(a), g.scalar(b));
    let l = infonce_graph(&mut g, xb, yb, tau, a, b)?;
    Ok(g.scalar_value(l))
}

pub fn udcl_loss(
    s: &[GaussianEmb],
    v: &[GaussianEmb],
    t: &[GaussianEmb],
    tau: f64,
    a: f64,
    b: f64,
) -> Result<f64> {
    if s.len() != v.len() || s.len() != t.len() {
        return Err(Error::arg("modality batches differ in size"));
    }
    let mut g = Graph::without_params();
    let embs = [
        GaussianBatch::constant(&mut g, s)?,
        GaussianBatch::constant(&mut g, v)?,
        GaussianBatch::constant(&mut g, t)?,
    ];
    let (tau, a, b) = (g.scalar(tau), g.scalar(a), g.scalar(b));
    let l = udcl_graph(&mut g, &embs, tau, a, b)?;
    Ok(g.scalar_value(l))
}

#[cfg(test)]
mod tests;
