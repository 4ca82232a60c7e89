//! Parameterized layers built on [`Graph`]. Each layer is a small descriptor
//! (name prefix and sizes); its weights live in a [`ParamStore`].

use rand::Rng as _;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::Rng;
use crate::error::{Error, Result};

/// Variance epsilon used by every layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn xavier(rng: &mut Rng, d_in: usize, d_out: usize) -> Tensor {
    let bound = (6.0 / (d_in + d_out) as f64).sqrt();
    let data = (0..d_in * d_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_raw(vec![d_in, d_out], data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias: true,
        }
    }

    pub fn without_bias(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias: false,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        store.insert(self.weight(), xavier(rng, self.d_in, self.d_out));
        self.init_bias(store);
    }

    /// Xavier weights multiplied by `gain`.
    pub fn init_scaled(&self, store: &mut ParamStore, rng: &mut Rng, gain: f64) {
        let w = xavier(rng, self.d_in, self.d_out);
        let data = w.data().iter().map(|v| v * gain).collect();
        store.insert(
            self.weight(),
            Tensor::from_raw(vec![self.d_in, self.d_out], data),
        );
        self.init_bias(store);
    }

    fn init_bias(&self, store: &mut ParamStore) {
        if self.bias {
            store.insert(self.bias(), Tensor::zeros(&[self.d_out]));
        }
    }

    pub fn init_zero(&self, store: &mut ParamStore) {
        store.insert(self.weight(), Tensor::zeros(&[self.d_in, self.d_out]));
        self.init_bias(store);
    }

    /// Sets the weight to the identity (square layers only) and bias to zero.
    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        if self.d_in != self.d_out {
            return Err(Error::shape("identity init needs a square layer"));
        }
        store.insert(self.weight(), Tensor::identity(self.d_in));
        self.init_bias(store);
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight())?;
        let h = g.matmul(x, w)?;
        if !self.bias {
            return Ok(h);
        }
        let b = g.param(&self.bias())?;
        g.add_row(h, b)
    }
}

/// `Linear -> gelu -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            l1: Linear::new(format!("{name}.l1"), d_in, hidden),
            l2: Linear::new(format!("{name}.l2"), hidden, d_out),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.l1.init(store, rng);
        self.l2.init(store, rng);
    }

    /// Random first layer, zero output layer: the MLP starts as the zero map.
    pub fn init_zero_output(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.l1.init(store, rng);
        self.l2.init_zero(store);
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(
            format!("{}.gamma", self.name),
            Tensor::full(&[self.dim], 1.0),
        );
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]));
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(&format!("{}.gamma", self.name))?;
        let beta = g.param(&format!("{}.beta", self.name))?;
        let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
        let n = g.mul_row(n, gamma)?;
        g.add_row(n, beta)
    }
}

/// Kernel-3, stride-1, same-padded 1D convolution over the time axis of a
/// `T x d_in` sequence. The weight is stored as `(3 * d_in) x d_out` with tap
/// order `[t-1, t, t+1]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub linear: Linear,
    pub d_in: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Self {
            linear: Linear::new(name, 3 * d_in, d_out),
            d_in,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.linear.init(store, rng);
    }

    pub fn init_zero(&self, store: &mut ParamStore) {
        self.linear.init_zero(store);
    }

    /// Center tap is the identity, side taps zero.
    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        let (d_in, d_out) = (self.d_in, self.linear.d_out);
        if d_in != d_out {
            return Err(Error::shape("identity conv needs d_in == d_out"));
        }
        let mut w = Tensor::zeros(&[3 * d_in, d_out]);
        for i in 0..d_in {
            w.data_mut()[(d_in + i) * d_out + i] = 1.0;
        }
        store.insert(self.linear.weight(), w);
        self.linear.init_bias(store);
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.d_in {
            return Err(Error::shape(format!(
                "conv {} expects width {}, got {}",
                self.linear.name,
                self.d_in,
                g.value(x).cols()
            )));
        }
        let prev = g.shift_rows(x, 1);
        let next = g.shift_rows(x, -1);
        let cols = g.concat_cols(&[prev, x, next])?;
        self.linear.forward(g, cols)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::shape(format!(
                "dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(format!("{name}.q"), dim, dim),
            // A key bias only shifts each score row by a constant.
            k: Linear::without_bias(format!("{name}.k"), dim, dim),
            v: Linear::new(format!("{name}.v"), dim, dim),
            o: Linear::new(format!("{name}.o"), dim, dim),
            dim,
            heads,
        })
    }

    fn layers(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for l in self.layers() {
            l.init(store, rng);
        }
    }

    pub fn init_identity(&self, store: &mut ParamStore) -> Result<()> {
        for l in self.layers() {
            l.init_identity(store)?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
        let (qd, kd, vd) = (g.value(q).dims(), g.value(k).dims(), g.value(v).dims());
        if qd.1 != self.dim || kd.1 != self.dim || vd.1 != self.dim {
            return Err(Error::shape(format!(
                "attention width {} vs q {qd:?} k {kd:?} v {vd:?}",
                self.dim
            )));
        }
        if kd.0 != vd.0 {
            return Err(Error::shape("keys and values differ in length"));
        }
        let qp = self.q.forward(g, q)?;
        let kp = self.k.forward(g, k)?;
        let vp = self.v.forward(g, v)?;
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(qp, h * hd, hd)?;
            let kh = g.slice_cols(kp, h * hd, hd)?;
            let vh = g.slice_cols(vp, h * hd, hd)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.o.forward(g, cat)
    }
}
