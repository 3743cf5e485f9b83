use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = T::c(c.lr * bc2.sqrt() / bc1);
        let eps = T::c(c.eps * bc2.sqrt());
        for (i, p) in store.tensors_mut().iter_mut().enumerate() {
            let g = grads.tensors[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                *w -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap());
        let mut opt = Adam::new(
            &store,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..2000 {
            let grads = Grads {
                tensors: vec![store.get(id).map(|v| 2.0 * v)],
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(id).norm_sq() < 1e-4);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_f64(&[1], &[1.0]).unwrap());
        let mut opt = Adam::new(&store, AdamConfig::default());
        let grads = Grads {
            tensors: vec![Tensor::from_f64(&[1], &[10.0]).unwrap()],
        };
        opt.step(&mut store, &grads);
        assert!((store.get(id).item() - (1.0 - 3e-4)).abs() < 1e-8);
    }
}
