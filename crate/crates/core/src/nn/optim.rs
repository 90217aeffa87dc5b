use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-parameter learning-rate multipliers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that received a
    /// gradient; `lr_mult` scales the learning rate per parameter name.
    pub fn step(
        &mut self,
        ps: &mut ParamStore<T>,
        graph: &Graph<T>,
        grads: &Gradients<T>,
        lr_mult: impl Fn(&str) -> f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.cfg.beta1), T::from_f64(self.cfg.beta2));
        for (name, grad) in grads.params(graph) {
            let Some(grad) = grad else { continue };
            if !ps.is_trainable(name) {
                continue;
            }
            let lr = self.cfg.lr * lr_mult(name);
            if lr == 0.0 {
                continue;
            }
            let p = ps.get_mut(name).expect("graph parameter missing from store");
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(grad.shape().to_vec()), Tensor::zeros(grad.shape().to_vec())));
            let step_size = T::from_f64(lr / bc1);
            let inv_bc2 = T::from_f64(1.0 / bc2);
            let eps = T::from_f64(self.cfg.eps);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::ONE - b1) * gv;
                *vv = b2 * *vv + (T::ONE - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("x", Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            let mut g = Graph::new();
            let x = ps.node(&mut g, "x");
            let l = g.square(x);
            let l = g.mean(l);
            let grads = g.backward(l);
            opt.step(&mut ps, &g, &grads, |_| 1.0);
        }
        assert!(ps.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn frozen_and_zero_lr_parameters_stay_put() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("a", Tensor::scalar(1.0));
        ps.insert("b", Tensor::scalar(1.0));
        ps.insert("c", Tensor::scalar(1.0));
        ps.freeze("a");
        let mut opt = Adam::new(AdamConfig::default());
        let mut g = Graph::new();
        let ids: Vec<_> = ["a", "b", "c"].iter().map(|n| ps.node(&mut g, n)).collect();
        let s = g.add(ids[0], ids[1]);
        let s = g.add(s, ids[2]);
        let grads = g.backward(s);
        opt.step(&mut ps, &g, &grads, |n| if n == "b" { 0.0 } else { 1.0 });
        assert_eq!(ps.get("a").unwrap().data()[0], 1.0);
        assert_eq!(ps.get("b").unwrap().data()[0], 1.0);
        assert!(ps.get("c").unwrap().data()[0] < 1.0);
    }
}
