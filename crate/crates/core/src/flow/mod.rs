//! Reconstruction: projection to a common `T_c x d_c` space, per-modality
//! coupling flows, latent transfer, refinement, and the reconstruction and
//! likelihood losses.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::alignment::Alignment;
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::numcore::nn::{Conv1d, Linear, Mlp, LAYER_NORM_EPS};
use crate::numcore::{seeded_rng, Graph, ParamStore, Rng, Tensor, Var};

/// `T_out x T_in` matrix that linearly interpolates a sequence to `T_out`
/// frames, first and last frames aligned.
pub fn resample_matrix(t_in: usize, t_out: usize) -> Result<Tensor> {
    if t_in == 0 || t_out == 0 {
        return Err(Error::arg("cannot resample an empty sequence"));
    }
    let mut m = vec![0.0; t_out * t_in];
    for i in 0..t_out {
        let pos = if t_out == 1 {
            (t_in - 1) as f64 / 2.0
        } else {
            (i * (t_in - 1)) as f64 / (t_out - 1) as f64
        };
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        m[i * t_in + lo] += 1.0 - frac;
        if frac > 0.0 {
            m[i * t_in + lo + 1] += frac;
        }
    }
    Tensor::matrix(t_out, t_in, m)
}

/// Per-modality convolution from the adapter width to `d_c`, then
/// resampling to `T_c` frames.
#[derive(Clone, Debug)]
pub struct Projection {
    pub convs: [Conv1d; 3],
    pub frames: usize,
    pub dim: usize,
}

impl Projection {
    pub fn new(width: usize, dim: usize, frames: usize) -> Result<Self> {
        if dim == 0 || frames == 0 {
            return Err(Error::Config("projection sizes must be positive".into()));
        }
        Ok(Self {
            convs: Modality::ALL.map(|m| Conv1d::new(format!("proj.{m}"), width, dim)),
            frames,
            dim,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for c in &self.convs {
            c.init(store, rng);
        }
    }

    /// Adapted `T x width` sequence to `T_c x d_c`, each frame standardized
    /// (no affine). The fixed frame scale keeps the reconstruction loss from
    /// being lowered by shrinking the projections.
    pub fn forward(&self, g: &mut Graph<'_>, m: Modality, h: Var) -> Result<Var> {
        let c = self.convs[m.index()].forward(g, h)?;
        let t = g.value(c).rows();
        let c = if t == self.frames {
            c
        } else {
            let r = g.constant(resample_matrix(t, self.frames)?);
            g.matmul(r, c)?
        };
        Ok(g.layer_norm_rows(c, LAYER_NORM_EPS))
    }
}

/// Raw frames through the modality's adapter and projection.
pub fn project_modality(
    features: &Tensor,
    m: Modality,
    align: &Alignment,
    proj: &Projection,
    params: &ParamStore,
) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let x = g.constant(features.clone());
    let h = align.adapt(&mut g, m, x)?;
    let p = proj.forward(&mut g, m, h)?;
    Ok(g.value(p).clone())
}

/// One affine coupling layer. Channels in `cond` pass through unchanged and
/// condition the scale and shift applied to the channels in `active`.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub cond: Vec<usize>,
    pub active: Vec<usize>,
    /// Position of each original channel in `cond ++ active`.
    merge: Vec<usize>,
    pub scale: Mlp,
    pub shift: Mlp,
}

impl Coupling {
    fn new(name: &str, dim: usize, parity: usize, hidden: usize) -> Self {
        let cond: Vec<usize> = (0..dim).filter(|i| i % 2 == parity).collect();
        let active: Vec<usize> = (0..dim).filter(|i| i % 2 != parity).collect();
        let mut merge = vec![0; dim];
        for (pos, &ch) in cond.iter().chain(&active).enumerate() {
            merge[ch] = pos;
        }
        let half = dim / 2;
        Self {
            scale: Mlp::new(&format!("{name}.scale"), half, hidden, half),
            shift: Mlp::new(&format!("{name}.shift"), half, hidden, half),
            cond,
            active,
            merge,
        }
    }

    fn nets(&self, g: &mut Graph<'_>, xa: Var, s_max: f64) -> Result<(Var, Var)> {
        let raw = self.scale.forward(g, xa)?;
        let s = g.tanh(raw);
        let s = g.scale(s, s_max);
        let t = self.shift.forward(g, xa)?;
        Ok((s, t))
    }

    /// Returns the output and the per-frame log-determinant (`T x 1`).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, s_max: f64) -> Result<(Var, Var)> {
        let xa = g.gather_cols(x, &self.cond)?;
        let xb = g.gather_cols(x, &self.active)?;
        let (s, t) = self.nets(g, xa, s_max)?;
        let e = g.exp(s);
        let yb = g.mul(xb, e)?;
        let yb = g.add(yb, t)?;
        let cat = g.concat_cols(&[xa, yb])?;
        let y = g.gather_cols(cat, &self.merge)?;
        Ok((y, g.row_sums(s)))
    }

    pub fn inverse(&self, g: &mut Graph<'_>, y: Var, s_max: f64) -> Result<Var> {
        let ya = g.gather_cols(y, &self.cond)?;
        let yb = g.gather_cols(y, &self.active)?;
        let (s, t) = self.nets(g, ya, s_max)?;
        let ns = g.neg(s);
        let e = g.exp(ns);
        let xb = g.sub(yb, t)?;
        let xb = g.mul(xb, e)?;
        let cat = g.concat_cols(&[ya, xb])?;
        g.gather_cols(cat, &self.merge)
    }
}

/// Stack of coupling layers applied frame-wise, with a fixed channel
/// permutation after every layer.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub layers: Vec<Coupling>,
    pub perms: Vec<Vec<usize>>,
    inv_perms: Vec<Vec<usize>>,
    pub dim: usize,
    pub s_max: f64,
}

impl FlowModel {
    pub fn new(name: &str, dim: usize, layers: usize, hidden: usize, s_max: f64) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::Config(format!(
                "flow width must be even and at least 2, got {dim}"
            )));
        }
        if layers == 0 || hidden == 0 || !(s_max > 0.0) {
            return Err(Error::Config(
                "flow needs layers, hidden width and s_max > 0".into(),
            ));
        }
        let couplings = (0..layers)
            .map(|k| Coupling::new(&format!("{name}.l{k}"), dim, k % 2, hidden))
            .collect();
        // Fixed shuffles between layers depend only on the width and layer
        // index. A last permutation restores the input channel order.
        let mut perms = Vec::new();
        let mut order: Vec<usize> = (0..dim).collect();
        for k in 0..layers - 1 {
            let mut p: Vec<usize> = (0..dim).collect();
            p.shuffle(&mut seeded_rng(((dim as u64) << 16) | k as u64));
            order = p.iter().map(|&j| order[j]).collect();
            perms.push(p);
        }
        perms.push(invert(&order));
        let inv_perms = perms.iter().map(|p| invert(p)).collect();
        Ok(Self {
            layers: couplings,
            perms,
            inv_perms,
            dim,
            s_max,
        })
    }

    /// Zero output layers: the flow starts as the identity.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for l in &self.layers {
            l.scale.init_zero_output(store, rng);
            l.shift.init_zero_output(store, rng);
        }
    }

    fn check(&self, g: &Graph<'_>, x: Var) -> Result<()> {
        let d = g.value(x).cols();
        if d != self.dim {
            return Err(Error::shape(format!(
                "flow expects width {}, got {d}",
                self.dim
            )));
        }
        Ok(())
    }

    /// `T x d_c` frames to latents and per-frame log-determinants (`T x 1`).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Var)> {
        self.check(g, x)?;
        let mut h = x;
        let mut logdet: Option<Var> = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let (y, ld) = layer.forward(g, h, self.s_max)?;
            logdet = Some(match logdet {
                None => ld,
                Some(acc) => g.add(acc, ld)?,
            });
            h = g.gather_cols(y, &self.perms[k])?;
        }
        Ok((h, logdet.unwrap()))
    }

    pub fn inverse(&self, g: &mut Graph<'_>, z: Var) -> Result<Var> {
        self.check(g, z)?;
        let mut h = z;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            h = g.gather_cols(h, &self.inv_perms[k])?;
            h = layer.inverse(g, h, self.s_max)?;
        }
        Ok(h)
    }
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

fn finite(t: &Tensor, what: &str) -> Result<Tensor> {
    Tensor::new(t.shape().to_vec(), t.data().to_vec())
        .map_err(|e| Error::numeric(format!("{what}: {e}")))
}

pub fn flow_forward(
    x: &Tensor,
    flow: &FlowModel,
    params: &ParamStore,
) -> Result<(Tensor, Vec<f64>)> {
    let mut g = Graph::new(params);
    let xv = g.constant(x.clone());
    let (z, ld) = flow.forward(&mut g, xv)?;
    let z = finite(g.value(z), "flow forward")?;
    Ok((z, g.value(ld).data().to_vec()))
}

pub fn flow_inverse(z: &Tensor, flow: &FlowModel, params: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let zv = g.constant(z.clone());
    let x = flow.inverse(&mut g, zv)?;
    finite(g.value(x), "flow inverse")
}

/// Elementwise mean of the available latents.
pub fn latent_transfer_graph(g: &mut Graph<'_>, available: &[Var]) -> Result<Var> {
    let (first, rest) = available
        .split_first()
        .ok_or_else(|| Error::arg("latent transfer needs at least one available modality"))?;
    let mut acc = *first;
    for &z in rest {
        acc = g.add(acc, z)?;
    }
    Ok(if rest.is_empty() {
        acc
    } else {
        g.scale(acc, 1.0 / available.len() as f64)
    })
}

pub fn latent_transfer(available: &BTreeMap<Modality, Tensor>, target: Modality) -> Result<Tensor> {
    if available.contains_key(&target) {
        return Err(Error::arg(format!(
            "target modality {target} is already available"
        )));
    }
    let mut g = Graph::without_params();
    let vars: Vec<Var> = available.values().map(|t| g.constant(t.clone())).collect();
    let z = latent_transfer_graph(&mut g, &vars)?;
    Ok(g.value(z).clone())
}

/// Conv, gelu, conv, channel gates, residual add.
#[derive(Clone, Debug)]
pub struct RefineBlock {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub squeeze: Linear,
    pub excite: Linear,
}

impl RefineBlock {
    fn new(name: &str, dim: usize) -> Self {
        let mid = (dim / 4).max(1);
        Self {
            conv1: Conv1d::new(format!("{name}.conv1"), dim, dim),
            conv2: Conv1d::new(format!("{name}.conv2"), dim, dim),
            squeeze: Linear::new(format!("{name}.squeeze"), dim, mid),
            excite: Linear::new(format!("{name}.excite"), mid, dim),
        }
    }

    /// Sigmoid gates (`1 x d`) from the time-averaged channels of `h`.
    pub fn gates(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        let p = g.mean_rows(h);
        let p = self.squeeze.forward(g, p)?;
        let p = g.gelu(p);
        let p = self.excite.forward(g, p)?;
        Ok(g.sigmoid(p))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.gelu(h);
        let h = self.conv2.forward(g, h)?;
        let gates = self.gates(g, h)?;
        let h = g.mul_row(h, gates)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Refiner {
    pub blocks: Vec<RefineBlock>,
}

impl Refiner {
    pub fn new(name: &str, dim: usize, blocks: usize) -> Self {
        Self {
            blocks: (0..blocks)
                .map(|b| RefineBlock::new(&format!("{name}.b{b}"), dim))
                .collect(),
        }
    }

    /// Second convolution of each block starts at zero, so the refiner
    /// starts as the identity.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for b in &self.blocks {
            b.conv1.init(store, rng);
            b.conv2.init_zero(store);
            b.squeeze.init(store, rng);
            b.excite.init(store, rng);
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        Ok(h)
    }
}

pub fn refine_reconstruction(x: &Tensor, refiner: &Refiner, params: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let xv = g.constant(x.clone());
    let y = refiner.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}

/// Squared Frobenius norm of `a - b` as a scalar node.
pub fn sq_error_graph(g: &mut Graph<'_>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

pub fn rec_loss(x_hat: &Tensor, x_true: &Tensor) -> Result<f64> {
    if x_hat.shape() != x_true.shape() {
        return Err(Error::shape(format!(
            "reconstruction {:?} vs target {:?}",
            x_hat.shape(),
            x_true.shape()
        )));
    }
    Ok(x_hat
        .data()
        .iter()
        .zip(x_true.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `ln(2 pi)`.
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean over frames of the standard-normal negative log-likelihood under
/// change of variables. `z` is `N x d`, `logdet` is `N x 1`.
pub fn flow_nll_graph(g: &mut Graph<'_>, z: Var, logdet: Var) -> Result<Var> {
    let d = g.value(z).cols() as f64;
    let sq = g.square(z);
    let sq = g.row_sums(sq);
    let half = g.scale(sq, 0.5);
    let per = g.sub(half, logdet)?;
    let per = g.offset(per, 0.5 * d * LN_2PI);
    Ok(g.mean(per))
}

pub fn flow_nll(z: &Tensor, logdet: &[f64]) -> Result<f64> {
    if z.rows() != logdet.len() {
        return Err(Error::shape(format!(
            "{} frames but {} log-determinants",
            z.rows(),
            logdet.len()
        )));
    }
    let mut g = Graph::without_params();
    let zv = g.constant(z.clone());
    let ld = g.constant(Tensor::matrix(logdet.len(), 1, logdet.to_vec())?);
    let l = flow_nll_graph(&mut g, zv, ld)?;
    Ok(g.scalar_value(l))
}

#[cfg(test)]
mod tests;
