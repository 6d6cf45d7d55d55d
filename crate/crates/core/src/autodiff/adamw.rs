use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::{clip_spectral_norm, AdapterStack, ParamHandle, SiteAdapter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::grads::GradientSet;

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
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One AdamW update of a single tensor at step `t` (1-based).
///
/// Decay is applied to `θ` first, then the bias-corrected Adam step.
pub fn adamw_update(
    theta: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    t: u64,
    lr: f64,
    hp: &AdamWConfig,
) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let decay = 1.0 - lr * hp.weight_decay;
    let it = theta
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((p, &g), (mi, vi)) in it {
        *p *= decay;
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * g;
        *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * g * g;
        let mhat = *mi / bc1;
        let vhat = *vi / bc2;
        *p -= lr * mhat / (vhat.sqrt() + hp.eps);
    }
}

/// AdamW over every trainable tensor of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    m: BTreeMap<ParamHandle, Matrix>,
    v: BTreeMap<ParamHandle, Matrix>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update, then projects every `C` back into the clip ball
    /// when `spectral_clip_c` is set.
    pub fn step(&mut self, stack: &mut AdapterStack, grads: &GradientSet, lr: f64) -> Result<()> {
        self.t += 1;
        for (h, g) in grads.iter() {
            let theta = stack
                .param_mut(h)
                .ok_or_else(|| Error::config("gradients", format!("unknown handle {h}")))?;
            if theta.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    left: theta.shape(),
                    right: g.shape(),
                });
            }
            let (r, c) = g.shape();
            let m = self.m.entry(*h).or_insert_with(|| Matrix::zeros(r, c));
            let v = self.v.entry(*h).or_insert_with(|| Matrix::zeros(r, c));
            adamw_update(theta, g, m, v, self.t, lr, &self.config);
        }
        if let Some(clip) = stack.config().spectral_clip_c {
            for site in stack.sites_mut() {
                if let SiteAdapter::TalkLora(tl) = &mut site.adapter {
                    clip_spectral_norm(&mut tl.c, clip);
                }
            }
        }
        Ok(())
    }
}
