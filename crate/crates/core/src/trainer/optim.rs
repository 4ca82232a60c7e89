use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numcore::{ParamStore, Tensor};

/// Adam with bias correction. Moments are keyed by parameter path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies the accumulated gradients in `store`.
    pub fn update(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, value, grad) in store.iter_with_grads_mut() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // After one step m_hat = g and v_hat = g^2, so every coordinate moves
        // by lr * sign(g) up to eps.
        let mut store = ParamStore::default();
        store.insert("w", Tensor::row(&[1.0, -2.0, 0.5]));
        let mut g = crate::numcore::Graph::new(&store);
        let w = g.param("w").unwrap();
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        store.accumulate(&grads).unwrap();
        let mut adam = Adam::new(0.1);
        adam.update(&mut store);
        let got = store.get("w").unwrap().data().to_vec();
        for (a, b) in got.iter().zip([0.9, -1.9, 0.4]) {
            assert!((a - b).abs() < 1e-6, "{got:?}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        store.insert("w", Tensor::row(&[3.0, -4.0]));
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            store.zero_grad();
            let mut g = crate::numcore::Graph::new(&store);
            let w = g.param("w").unwrap();
            let c = g.offset(w, -1.0);
            let sq = g.square(c);
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap();
            store.accumulate(&grads).unwrap();
            adam.update(&mut store);
        }
        for x in store.get("w").unwrap().data() {
            assert!((x - 1.0).abs() < 1e-3);
        }
    }
}
