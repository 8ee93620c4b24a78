//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::model::Params;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First/second moment buffers plus the step counter, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: Vec<(String, Tensor)>,
    pub v: Vec<(String, Tensor)>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &Params, config: AdamWConfig) -> Self {
        let m = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape.clone())))
            .collect();
        let v = params
            .iter()
            .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape.clone())))
            .collect();
        AdamWState { config, m, v, step: 0 }
    }
}

/// Decay applies to matrices only; embeddings, the mask token, biases and
/// norm affines stay undecayed.
pub fn decays(name: &str, ndim: usize) -> bool {
    ndim >= 2 && !name.contains("group_embed") && !name.contains("mask_token")
}

/// One AdamW step over all parameters. Decoupled weight decay is applied
/// before the moment update; parameters and moments are quantized to f32
/// precision afterwards so in-memory state equals checkpointed state.
pub fn adamw_step(
    params: &mut Params,
    grads: &[(String, Tensor)],
    state: &mut AdamWState,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adamw: {} gradients for {} states",
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (i, (name, grad)) in grads.iter().enumerate() {
        if state.m[i].0 != *name {
            return Err(Error::Shape(format!(
                "adamw: gradient {name} out of order (state has {})",
                state.m[i].0
            )));
        }
        let p = params.get_mut(name)?;
        if p.shape != grad.shape {
            return Err(Error::Shape(format!("adamw: shape mismatch for {name}")));
        }
        let decay = decays(name, p.shape.len());
        let m = &mut state.m[i].1.data;
        let v = &mut state.v[i].1.data;
        for j in 0..p.data.len() {
            if decay && c.weight_decay != 0.0 {
                p.data[j] *= 1.0 - lr * c.weight_decay;
            }
            let g = grad.data[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p.data[j] -= lr * mhat / (vhat.sqrt() + c.eps);
            p.data[j] = p.data[j] as f32 as f64;
            m[j] = m[j] as f32 as f64;
            v[j] = v[j] as f32 as f64;
        }
    }
    Ok(())
}

/// Cosine annealing: base·0.5·(1+cos(π·epoch/total)). Epoch 0 gives the base
/// rate, the final epoch index gives exactly zero.
pub fn cosine_lr(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return base;
    }
    if epoch >= total_epochs {
        return 0.0;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}
