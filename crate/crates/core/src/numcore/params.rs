use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with matching gradient accumulators.
///
/// Backed by a `BTreeMap`, so every traversal is in sorted path order.
/// Equality compares names and values; gradient buffers are scratch space.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, Tensor>", into = "BTreeMap<String, Tensor>")]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| ka == kb && a.value == b.value)
    }
}

impl From<BTreeMap<String, Tensor>> for ParamStore {
    fn from(values: BTreeMap<String, Tensor>) -> Self {
        let mut store = ParamStore::default();
        for (k, v) in values {
            store.insert(k, v);
        }
        store
    }
}

impl From<ParamStore> for BTreeMap<String, Tensor> {
    fn from(store: ParamStore) -> Self {
        store
            .params
            .into_iter()
            .map(|(k, p)| (k, p.value))
            .collect()
    }
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name.into(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    /// `(name, value, grad)` triples in path order.
    pub fn iter_with_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.params
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value, &p.grad))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the parameter gradients from a backward pass.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.params() {
            let Some(g) = g else { continue };
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
            if p.grad.len() != g.len() {
                return Err(Error::shape(format!("gradient shape mismatch for {name}")));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }
}
