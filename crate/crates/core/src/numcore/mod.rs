//! Tensor arithmetic, a reverse-mode tape, layers, and a finite-difference
//! gradient checker.

mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_many, grad_check_with, relative_error, GradCheckReport, ParamCheck,
    Stencil,
};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Deterministic generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("softmax input not finite"));
    }
    Ok(graph::softmax_unchecked(v))
}

/// Exact-CDF gelu, `x * Phi(x)`, applied elementwise.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let data = x.data().iter().map(|&v| graph::gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Runs one attention layer outside of training.
pub fn multi_head_attention(
    attn: &nn::MultiHeadAttention,
    params: &ParamStore,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let (q, k, v) = (
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
    );
    let out = attn.forward(&mut g, q, k, v)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests;
