//! Adam optimizer with bias correction. Each task owns a separate
//! instance, so one task's moment estimates are never touched by another
//! task's steps.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{err, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Optimizer state: first/second moments and step counter per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    slots: BTreeMap<usize, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, slots: BTreeMap::new() }
    }

    /// Apply one update for every `(parameter, gradient)` pair:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) -> Result<()> {
        for (id, g) in grads {
            let numel = store.value(*id).numel();
            if g.len() != numel {
                return Err(err!(
                    Contract,
                    "gradient for {:?} has {} entries, parameter has {numel}",
                    store.name(*id),
                    g.len()
                ));
            }
            let slot = self
                .slots
                .entry(id.0)
                .or_insert_with(|| Moments { m: vec![0.0; numel], v: vec![0.0; numel], t: 0 });
            slot.t += 1;
            let b1t = 1.0 - libm::pow(self.cfg.beta1, slot.t as f64);
            let b2t = 1.0 - libm::pow(self.cfg.beta2, slot.t as f64);
            let theta = store.value_mut(*id).data_mut();
            for i in 0..numel {
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g[i];
                slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = slot.m[i] / b1t;
                let v_hat = slot.v[i] / b2t;
                theta[i] -= self.cfg.lr * m_hat / (libm::sqrt(v_hat) + self.cfg.eps);
            }
        }
        Ok(())
    }

    /// Bit-exact fingerprint of the optimizer state, for isolation checks.
    pub fn fingerprint(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (id, s) in &self.slots {
            out.push(*id as u64);
            out.push(s.t);
            out.extend(s.m.iter().map(|v| v.to_bits()));
            out.extend(s.v.iter().map(|v| v.to_bits()));
        }
        out
    }

    pub fn steps_for(&self, id: ParamId) -> u64 {
        self.slots.get(&id.0).map_or(0, |s| s.t)
    }
}
