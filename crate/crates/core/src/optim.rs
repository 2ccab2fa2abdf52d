use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ParamStore;
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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_state(config: AdamConfig, m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::dim("adam state", &[m.len()], &[v.len()]));
        }
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(Error::dim("adam state", a.shape(), b.shape()));
            }
        }
        Ok(Self { config, m, v, step })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::dim("adam_step", &[store.len(), grads.len()], &[self.m.len()]));
        }
        for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            if store.get(id).shape() != g.shape() || self.m[id.index()].shape() != g.shape() {
                return Err(Error::Parameter {
                    name: store.name(id).into(),
                    detail: alloc::format!("gradient shape {:?} vs parameter {:?}", g.shape(), store.get(id).shape()),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for (k, (id, g)) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let theta = store.get_mut(id).data_mut();
            for i in 0..theta.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
