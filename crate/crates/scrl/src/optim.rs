//! RMSProp with momentum on the scaled step and L2 weight decay folded into
//! the gradient.
//!
//! Per parameter w with gradient g and decayed gradient g' = g + wd·w:
//!   cache ← α·cache + (1−α)·g'²
//!   v     ← μ·v + lr·g'/(√cache + ε)
//!   w     ← w − v
//!
//! Weight decay applies only to entries flagged `decay` (weights, not biases);
//! non-trainable entries are skipped entirely.

use crate::error::{Error, Result};
use crate::graph::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 0.0004, weight_decay: 0.0005, momentum: 0.9, rms_decay: 0.9, rms_eps: 1e-8 }
    }
}

/// Per-parameter running squared-gradient cache and momentum buffer.
#[derive(Clone, Debug)]
pub struct RmsPropState {
    pub cache: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
}

impl RmsPropState {
    pub fn new(params: &ParamSet) -> Self {
        let cache = params.iter().map(|(_, e)| Tensor::zeros(e.value.shape())).collect();
        let velocity = params.iter().map(|(_, e)| Tensor::zeros(e.value.shape())).collect();
        Self { cache, velocity }
    }

    /// One update over every trainable parameter; gradients are read from the
    /// parameter set and left untouched (the trainer zeroes them per step).
    pub fn step(&mut self, params: &mut ParamSet, cfg: &RmsPropConfig) -> Result<()> {
        if self.cache.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, set has {}",
                self.cache.len(),
                params.len()
            )));
        }
        let alpha = cfg.rms_decay;
        for (i, (_, entry)) in params.iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            if self.cache[i].shape() != entry.value.shape() {
                return Err(Error::Contract(format!(
                    "optimizer state shape {:?} does not match parameter {} ({:?})",
                    self.cache[i].shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            let wd = if entry.decay { cfg.weight_decay } else { 0.0 };
            let grads = entry.grad.data();
            let cache = self.cache[i].data_mut();
            let vel = self.velocity[i].data_mut();
            let w = {
                // Split borrows: read grads slice first, then mutate values.
                let values = entry.value.data();
                let mut new_values = Vec::with_capacity(values.len());
                for j in 0..values.len() {
                    let g = grads[j] + wd * values[j];
                    cache[j] = alpha * cache[j] + (1.0 - alpha) * g * g;
                    vel[j] = cfg.momentum * vel[j] + cfg.lr * g / (cache[j].sqrt() + cfg.rms_eps);
                    new_values.push(values[j] - vel[j]);
                }
                new_values
            };
            entry.value.data_mut().copy_from_slice(&w);
        }
        Ok(())
    }
}
