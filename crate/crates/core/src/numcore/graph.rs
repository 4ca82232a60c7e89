//! Reverse-mode tape over rank-2 `f64` tensors.
//!
//! Every operation appends a node holding its forward value and enough
//! context for the vector-Jacobian product. `backward` walks the tape once in
//! reverse index order, so gradient accumulation order is fixed.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddScalarVar(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Recip(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    RowSums(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows { x: Var, mask: Option<Vec<bool>> },
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherCols { x: Var, idx: Vec<usize> },
    ShiftRows { x: Var, shift: isize },
    SqDist(Var, Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Pick { x: Var, idx: Vec<usize> },
    WeightedSum { x: Var, w: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Squared norms below this are treated as zero-length rows.
const NORM_FLOOR: f64 = 1e-24;

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    /// Nodes created by `detach`, in call order.
    detached: Vec<usize>,
    /// Values that successive `detach` calls return instead of their input.
    frozen: Option<Vec<Tensor>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::without_params()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            detached: Vec::new(),
            frozen: None,
        }
    }

    /// Like `new`, but the `k`-th `detach` call yields `frozen[k]`. Replaying
    /// the detached values of a base pass turns every stop-gradient point
    /// into a true constant, so finite differences measure the same
    /// function that backprop differentiates.
    pub fn with_frozen(store: &'p ParamStore, frozen: Vec<Tensor>) -> Self {
        Self {
            frozen: Some(frozen),
            ..Self::new(store)
        }
    }

    /// Current values of every detached node, in call order.
    pub fn detached_values(&self) -> Vec<Tensor> {
        self.detached
            .iter()
            .map(|&i| self.nodes[i].value.clone())
            .collect()
    }

    pub fn without_params() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            params: BTreeMap::new(),
            detached: Vec::new(),
            frozen: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let (r, c) = t.dims();
        let t = Tensor::from_raw(vec![r, c], t.into_data());
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Copies the value of `v` into a new leaf; gradients stop here.
    ///
    /// Panics if a frozen graph sees more detach calls than it was given, or
    /// a replayed value has a different shape.
    pub fn detach(&mut self, v: Var) -> Var {
        let k = self.detached.len();
        let t = match &self.frozen {
            Some(vals) => {
                let t = vals
                    .get(k)
                    .expect("more detach calls than frozen values")
                    .clone();
                assert_eq!(
                    t.dims(),
                    self.dims(v),
                    "frozen value {k} has the wrong shape"
                );
                t
            }
            None => self.nodes[v.0].value.clone(),
        };
        let out = self.push(t, Op::Leaf);
        self.detached.push(out.0);
        out
    }

    /// Leaf bound to a named parameter. Repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let store = self
            .store
            .ok_or_else(|| Error::Config(format!("graph has no parameter store ({name})")))?;
        let t = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?
            .clone();
        let v = self.constant(t);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_raw(vec![t.rows(), t.cols()], data);
        self.push(out, op)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        what: &str,
    ) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::from_raw(vec![r, c], data), op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} @ {k2}x{n}")));
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Tensor::from_raw(vec![m, n], data), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let data = transpose_raw(self.data(x), r, c);
        self.push(Tensor::from_raw(vec![c, r], data), Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn check_row(&self, x: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let (r, c) = self.dims(x);
        if self.dims(row) != (1, c) {
            return Err(Error::shape(format!(
                "{what}: row {:?} against {r}x{c}",
                self.dims(row)
            )));
        }
        Ok((r, c))
    }

    /// `x + row`, broadcasting a `1 x c` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.check_row(x, row, "add_row")?;
        let rv = self.data(row);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv[i % c])
            .collect();
        Ok(self.push(Tensor::from_raw(vec![r, c], data), Op::AddRow(x, row)))
    }

    /// `x * row`, broadcasting a `1 x c` row over every row of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.check_row(x, row, "mul_row")?;
        let rv = self.data(row);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv[i % c])
            .collect();
        Ok(self.push(Tensor::from_raw(vec![r, c], data), Op::MulRow(x, row)))
    }

    fn check_scalar(&self, s: Var, what: &str) -> Result<f64> {
        if self.dims(s) != (1, 1) {
            return Err(Error::shape(format!(
                "{what}: expected scalar, got {:?}",
                self.dims(s)
            )));
        }
        Ok(self.data(s)[0])
    }

    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar(s, "add_scalar_var")?;
        Ok(self.unary(x, |v| v + sv, Op::AddScalarVar(x, s)))
    }

    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar(s, "mul_scalar_var")?;
        Ok(self.unary(x, |v| v * sv, Op::MulScalarVar(x, s)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu_scalar, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid_scalar, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus_scalar, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.nodes[x.0].value.mean_rows();
        self.push(t, Op::MeanRows(x))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn row_sums(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let d = self.data(x);
        let data = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
        self.push(Tensor::from_raw(vec![r, 1], data), Op::RowSums(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(softmax_unchecked(&d[i * c..(i + 1) * c]));
        }
        self.push(Tensor::from_raw(vec![r, c], out), Op::SoftmaxRows(x))
    }

    /// Row-wise log-softmax. With a mask, only entries marked `true` take
    /// part in the normalizer; masked-out entries output 0.
    pub fn log_softmax_rows(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(Error::shape("log_softmax mask length"));
            }
        }
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[i * c + j]);
            let mx = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::arg(format!(
                    "log_softmax row {i} has no active entries"
                )));
            }
            let lse = mx
                + (0..c)
                    .filter(|&j| keep(j))
                    .map(|j| (row[j] - mx).exp())
                    .sum::<f64>()
                    .ln();
            for j in (0..c).filter(|&j| keep(j)) {
                out[i * c + j] = row[j] - lse;
            }
        }
        Ok(self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::LogSoftmaxRows { x, mask },
        ))
    }

    /// Per-row standardization with variance epsilon `eps` (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let (r, c) = self.dims(x);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mu) * inv));
            inv_std.push(inv);
        }
        self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::LayerNormRows { x, inv_std },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::shape(format!("slice_cols {start}+{len} > {c}")));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        Ok(self.push(
            Tensor::from_raw(vec![r, len], out),
            Op::SliceCols { x, start },
        ))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let r = xs
            .first()
            .map(|&x| self.dims(x).0)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if xs.iter().any(|&x| self.dims(x).0 != r) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = xs.iter().map(|&x| self.dims(x).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &x in xs {
                let c = self.dims(x).1;
                out.extend_from_slice(&self.data(x)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor::from_raw(vec![r, total], out),
            Op::ConcatCols(xs.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let c = xs
            .first()
            .map(|&x| self.dims(x).1)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if xs.iter().any(|&x| self.dims(x).1 != c) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &x in xs {
            out.extend_from_slice(self.data(x));
            rows += self.dims(x).0;
        }
        Ok(self.push(
            Tensor::from_raw(vec![rows, c], out),
            Op::ConcatRows(xs.to_vec()),
        ))
    }

    /// `out[:, j] = x[:, idx[j]]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if idx.iter().any(|&j| j >= c) {
            return Err(Error::shape("gather_cols index out of range"));
        }
        let d = self.data(x);
        let n = idx.len();
        let mut out = Vec::with_capacity(r * n);
        for i in 0..r {
            out.extend(idx.iter().map(|&j| d[i * c + j]));
        }
        Ok(self.push(
            Tensor::from_raw(vec![r, n], out),
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// `out[i] = x[i - shift]`, zero where out of range.
    pub fn shift_rows(&mut self, x: Var, shift: isize) -> Var {
        let (r, c) = self.dims(x);
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let src = i as isize - shift;
            if (0..r as isize).contains(&src) {
                let s = src as usize;
                out[i * c..(i + 1) * c].copy_from_slice(&d[s * c..(s + 1) * c]);
            }
        }
        self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::ShiftRows { x, shift },
        )
    }

    /// Pairwise squared Euclidean distances between rows: `n x d, m x d -> n x m`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        let (m, d2) = self.dims(b);
        if d != d2 {
            return Err(Error::shape(format!("sq_dist widths {d} vs {d2}")));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let s = (0..d)
                    .map(|k| {
                        let e = ad[i * d + k] - bd[j * d + k];
                        e * e
                    })
                    .sum();
                out.push(s);
            }
        }
        Ok(self.push(Tensor::from_raw(vec![n, m], out), Op::SqDist(a, b)))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let d = self.data(x);
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &d[i * c..(i + 1) * c];
            let n = (row.iter().map(|v| v * v).sum::<f64>() + NORM_FLOOR).sqrt();
            out.extend(row.iter().map(|v| v / n));
            norms.push(n);
        }
        self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::NormalizeRows { x, norms },
        )
    }

    /// `out[i] = x[i, idx[i]]` as an `r x 1` column.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::shape("pick indices do not match rows"));
        }
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(i, &j)| d[i * c + j]).collect();
        Ok(self.push(
            Tensor::from_raw(vec![r, 1], out),
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// `sum_ij w_ij * x_ij` for a constant weight array.
    pub fn weighted_sum(&mut self, x: Var, w: Vec<f64>) -> Result<Var> {
        if w.len() != self.data(x).len() {
            return Err(Error::shape("weighted_sum weight length"));
        }
        let s = self.data(x).iter().zip(&w).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, w }))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::numeric("non-finite loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gd = g.data();
        let (r, c) = node.value.dims();
        let mut acc = |v: Var, data: Vec<f64>| {
            let (vr, vc) = self.dims(v);
            let t = Tensor::from_raw(vec![vr, vc], data);
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let map = |x: Var, f: &dyn Fn(usize, f64) -> f64| -> Vec<f64> {
            let xd = self.data(x);
            gd.iter()
                .enumerate()
                .map(|(k, &gv)| gv * f(k, xd[k]))
                .collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let bt = transpose_raw(self.data(*b), k, n);
                acc(*a, matmul_raw(gd, &bt, m, n, k));
                let at = transpose_raw(self.data(*a), m, k);
                acc(*b, matmul_raw(&at, gd, k, m, n));
            }
            Op::Transpose(x) => acc(*x, transpose_raw(gd, r, c)),
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, gd.iter().zip(bd).map(|(g, b)| g * b).collect());
                acc(*b, gd.iter().zip(ad).map(|(g, a)| g * a).collect());
            }
            Op::AddRow(x, row) => {
                acc(*x, gd.to_vec());
                let mut dr = vec![0.0; c];
                for (k, gv) in gd.iter().enumerate() {
                    dr[k % c] += gv;
                }
                acc(*row, dr);
            }
            Op::MulRow(x, row) => {
                let (xd, rd) = (self.data(*x), self.data(*row));
                acc(
                    *x,
                    gd.iter().enumerate().map(|(k, g)| g * rd[k % c]).collect(),
                );
                let mut dr = vec![0.0; c];
                for (k, gv) in gd.iter().enumerate() {
                    dr[k % c] += gv * xd[k];
                }
                acc(*row, dr);
            }
            Op::AddScalarVar(x, s) => {
                acc(*x, gd.to_vec());
                acc(*s, vec![gd.iter().sum()]);
            }
            Op::MulScalarVar(x, s) => {
                let sv = self.data(*s)[0];
                acc(*x, gd.iter().map(|g| g * sv).collect());
                let xd = self.data(*x);
                acc(*s, vec![gd.iter().zip(xd).map(|(g, x)| g * x).sum()]);
            }
            Op::Scale(x, k) => acc(*x, gd.iter().map(|g| g * k).collect()),
            Op::Offset(x) => acc(*x, gd.to_vec()),
            Op::Recip(x) => acc(*x, gd.iter().zip(y).map(|(g, y)| -g * y * y).collect()),
            Op::Gelu(x) => acc(*x, map(*x, &|_, v| gelu_grad(v))),
            Op::Tanh(x) => acc(
                *x,
                gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            ),
            Op::Exp(x) => acc(*x, gd.iter().zip(y).map(|(g, y)| g * y).collect()),
            Op::Sigmoid(x) => acc(
                *x,
                gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            ),
            Op::Softplus(x) => acc(*x, map(*x, &|_, v| sigmoid_scalar(v))),
            Op::Square(x) => acc(*x, map(*x, &|_, v| 2.0 * v)),
            Op::Sum(x) => acc(*x, vec![gd[0]; self.data(*x).len()]),
            Op::Mean(x) => {
                let n = self.data(*x).len();
                acc(*x, vec![gd[0] / n as f64; n]);
            }
            Op::MeanRows(x) => {
                let (xr, xc) = self.dims(*x);
                let inv = 1.0 / xr as f64;
                acc(*x, (0..xr * xc).map(|k| gd[k % xc] * inv).collect());
            }
            Op::RowSums(x) => {
                let (xr, xc) = self.dims(*x);
                acc(*x, (0..xr * xc).map(|k| gd[k / xc]).collect());
            }
            Op::SoftmaxRows(x) => {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c..(i + 1) * c;
                    let dot: f64 = s.clone().map(|k| gd[k] * y[k]).sum();
                    for k in s {
                        dx[k] = y[k] * (gd[k] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmaxRows { x, mask } => {
                let keep = |k: usize| mask.as_ref().is_none_or(|m| m[k]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c..(i + 1) * c;
                    let gsum: f64 = s.clone().filter(|&k| keep(k)).map(|k| gd[k]).sum();
                    for k in s.filter(|&k| keep(k)) {
                        dx[k] = gd[k] - y[k].exp() * gsum;
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNormRows { x, inv_std } => {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c..(i + 1) * c;
                    let mg = s.clone().map(|k| gd[k]).sum::<f64>() / c as f64;
                    let mgy = s.clone().map(|k| gd[k] * y[k]).sum::<f64>() / c as f64;
                    for k in s {
                        dx[k] = inv_std[i] * (gd[k] - mg - y[k] * mgy);
                    }
                }
                acc(*x, dx);
            }
            Op::SliceCols { x, start } => {
                let xc = self.dims(*x).1;
                let mut dx = vec![0.0; r * xc];
                for i in 0..r {
                    dx[i * xc + start..i * xc + start + c].copy_from_slice(&gd[i * c..(i + 1) * c]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(xs) => {
                let mut off = 0;
                for &x in xs {
                    let xc = self.dims(x).1;
                    let mut dx = Vec::with_capacity(r * xc);
                    for i in 0..r {
                        dx.extend_from_slice(&gd[i * c + off..i * c + off + xc]);
                    }
                    acc(x, dx);
                    off += xc;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.data(x).len();
                    acc(x, gd[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::GatherCols { x, idx } => {
                let xc = self.dims(*x).1;
                let mut dx = vec![0.0; r * xc];
                for i in 0..r {
                    for (j, &src) in idx.iter().enumerate() {
                        dx[i * xc + src] += gd[i * c + j];
                    }
                }
                acc(*x, dx);
            }
            Op::ShiftRows { x, shift } => {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let src = i as isize - shift;
                    if (0..r as isize).contains(&src) {
                        let s = src as usize;
                        dx[s * c..(s + 1) * c].copy_from_slice(&gd[i * c..(i + 1) * c]);
                    }
                }
                acc(*x, dx);
            }
            Op::SqDist(a, b) => {
                let (n, d) = self.dims(*a);
                let m = self.dims(*b).0;
                let (ad, bd) = (self.data(*a), self.data(*b));
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; m * d];
                for i in 0..n {
                    for j in 0..m {
                        let g2 = 2.0 * gd[i * m + j];
                        if g2 == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let e = g2 * (ad[i * d + k] - bd[j * d + k]);
                            da[i * d + k] += e;
                            db[j * d + k] -= e;
                        }
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::NormalizeRows { x, norms } => {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c..(i + 1) * c;
                    let dot: f64 = s.clone().map(|k| y[k] * gd[k]).sum();
                    for k in s {
                        dx[k] = (gd[k] - y[k] * dot) / norms[i];
                    }
                }
                acc(*x, dx);
            }
            Op::Pick { x, idx } => {
                let xc = self.dims(*x).1;
                let mut dx = vec![0.0; self.data(*x).len()];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * xc + j] += gd[i];
                }
                acc(*x, dx);
            }
            Op::WeightedSum { x, w } => acc(*x, w.iter().map(|w| w * gd[0]).collect()),
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter touched by the graph, keyed by name.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&Tensor>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), self.get(*v)))
    }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
