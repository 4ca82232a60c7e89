//! Supervised contrastive refinement over pooled modality vectors,
//! attention fusion with the text-like stream as query, and the classifier.

use crate::error::{Error, Result};
use crate::numcore::nn::{Mlp, MultiHeadAttention};
use crate::numcore::{Graph, ParamStore, Rng, Tensor, Var};

/// Temperature of the supervised contrastive loss.
pub const SPCL_TAU: f64 = 0.1;

/// Hidden width of the classifier head.
pub const CLASSIFIER_HIDDEN: usize = 64;

/// One pooled modality vector with the identity of its instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledRep {
    pub vector: Vec<f64>,
    pub label: usize,
    pub instance: usize,
}

/// Per-anchor positive weights for the contrastive loss: same label, other
/// instance. Returns the flat `P x P` weight array (each anchor row sums to
/// `1 / anchors`) and the number of anchors that have positives.
pub fn positive_weights(labels: &[usize], instances: &[usize]) -> Result<(Vec<f64>, usize)> {
    let n = labels.len();
    if instances.len() != n {
        return Err(Error::arg("labels and instance ids differ in length"));
    }
    let is_pos =
        |i: usize, p: usize| p != i && labels[p] == labels[i] && instances[p] != instances[i];
    let counts: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&p| is_pos(i, p)).count())
        .collect();
    let anchors = counts.iter().filter(|&&c| c > 0).count();
    if anchors == 0 {
        return Err(Error::arg("no anchor has a positive"));
    }
    let mut w = vec![0.0; n * n];
    for i in (0..n).filter(|&i| counts[i] > 0) {
        let wi = 1.0 / (counts[i] * anchors) as f64;
        for p in (0..n).filter(|&p| is_pos(i, p)) {
            w[i * n + p] = wi;
        }
    }
    Ok((w, anchors))
}

/// Supervised contrastive loss over the rows of `reps` (`P x d`). Anchors
/// without positives are skipped.
pub fn spcl_graph(
    g: &mut Graph<'_>,
    reps: Var,
    labels: &[usize],
    instances: &[usize],
    tau: f64,
) -> Result<Var> {
    let n = g.value(reps).rows();
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{n} reps but {} labels",
            labels.len()
        )));
    }
    let (w, _) = positive_weights(labels, instances)?;
    let z = g.normalize_rows(reps);
    let zt = g.transpose(z);
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / tau);
    let mask = (0..n * n).map(|k| k / n != k % n).collect();
    let lsm = g.log_softmax_rows(logits, Some(mask))?;
    let s = g.weighted_sum(lsm, w)?;
    Ok(g.neg(s))
}

pub fn spcl_loss(reps: &[PooledRep], tau: f64) -> Result<f64> {
    let d = reps
        .first()
        .map(|r| r.vector.len())
        .ok_or_else(|| Error::arg("empty pool"))?;
    if reps.iter().any(|r| r.vector.len() != d) {
        return Err(Error::shape("pooled vectors differ in width"));
    }
    let mut g = Graph::without_params();
    let x = g.constant(Tensor::matrix(
        reps.len(),
        d,
        reps.iter().flat_map(|r| r.vector.clone()).collect(),
    )?);
    let labels: Vec<usize> = reps.iter().map(|r| r.label).collect();
    let inst: Vec<usize> = reps.iter().map(|r| r.instance).collect();
    let l = spcl_graph(&mut g, x, &labels, &inst, tau)?;
    Ok(g.scalar_value(l))
}

/// Cross-attention from the text-like query to the video-like and
/// speech-like streams, optionally speech-to-video as a third block, then
/// self-attention over the concatenation and a mean over time.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub tv: MultiHeadAttention,
    pub ts: MultiHeadAttention,
    pub sv: Option<MultiHeadAttention>,
    pub self_attn: MultiHeadAttention,
    pub dim: usize,
}

impl Fusion {
    pub fn new(dim: usize, heads: usize, third_block: bool) -> Result<Self> {
        let blocks = if third_block { 3 } else { 2 };
        let cfg = |e: Error| Error::Config(e.to_string());
        Ok(Self {
            tv: MultiHeadAttention::new("fuse.tv", dim, heads).map_err(cfg)?,
            ts: MultiHeadAttention::new("fuse.ts", dim, heads).map_err(cfg)?,
            sv: if third_block {
                Some(MultiHeadAttention::new("fuse.sv", dim, heads).map_err(cfg)?)
            } else {
                None
            },
            self_attn: MultiHeadAttention::new("fuse.self", blocks * dim, heads).map_err(cfg)?,
            dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.self_attn.dim
    }

    fn blocks(&self) -> impl Iterator<Item = &MultiHeadAttention> {
        [&self.tv, &self.ts]
            .into_iter()
            .chain(self.sv.as_ref())
            .chain([&self.self_attn])
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for b in self.blocks() {
            b.init(store, rng);
        }
    }

    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        for b in self.blocks() {
            b.init_identity(store)?;
        }
        Ok(())
    }

    /// Three `T x d` sequences to one `1 x out_dim` vector.
    pub fn forward(&self, g: &mut Graph<'_>, t_like: Var, s_like: Var, v_like: Var) -> Result<Var> {
        let dims = [
            g.value(t_like).dims(),
            g.value(s_like).dims(),
            g.value(v_like).dims(),
        ];
        if dims[1] != dims[0] || dims[2] != dims[0] {
            return Err(Error::shape(format!(
                "fusion inputs differ in shape: {dims:?}"
            )));
        }
        let mut parts = vec![
            self.tv.forward(g, t_like, v_like, v_like)?,
            self.ts.forward(g, t_like, s_like, s_like)?,
        ];
        if let Some(sv) = &self.sv {
            parts.push(sv.forward(g, s_like, v_like, v_like)?);
        }
        let h = g.concat_cols(&parts)?;
        let h = self.self_attn.forward(g, h, h, h)?;
        Ok(g.mean_rows(h))
    }
}

pub fn fuse(
    fusion: &Fusion,
    params: &ParamStore,
    t_like: &Tensor,
    s_like: &Tensor,
    v_like: &Tensor,
) -> Result<Vec<f64>> {
    let mut g = Graph::new(params);
    let (t, s, v) = (
        g.constant(t_like.clone()),
        g.constant(s_like.clone()),
        g.constant(v_like.clone()),
    );
    let h = fusion.forward(&mut g, t, s, v)?;
    Ok(g.value(h).data().to_vec())
}

/// `Linear -> gelu -> Linear` to class logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub mlp: Mlp,
    pub classes: usize,
}

impl Classifier {
    pub fn new(d_in: usize, classes: usize) -> Self {
        Self {
            mlp: Mlp::new("cls", d_in, CLASSIFIER_HIDDEN, classes),
            classes,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.mlp.init(store, rng);
    }

    pub fn forward(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        self.mlp.forward(g, h)
    }
}

pub fn classify(classifier: &Classifier, params: &ParamStore, h: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new(params);
    let hv = g.constant(Tensor::row(h));
    let logits = classifier.forward(&mut g, hv)?;
    Ok(g.value(logits).data().to_vec())
}

/// Mean softmax cross-entropy of `N x C` logits.
pub fn cls_graph(g: &mut Graph<'_>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).dims();
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::arg(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let lsm = g.log_softmax_rows(logits, None)?;
    let picked = g.pick(lsm, labels)?;
    let m = g.mean(picked);
    Ok(g.neg(m))
}

pub fn cls_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::arg("no logits"));
    }
    let mut g = Graph::without_params();
    let l = g.constant(Tensor::row(logits));
    let loss = cls_graph(&mut g, l, &[label])?;
    Ok(g.scalar_value(loss))
}
