use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterStack, FrozenModel};
use crate::autodiff::{backward_with_masks, batch_loss, AdamW, AdamWConfig, LossSpec};
use crate::error::{Error, Result};
use crate::linalg::{RngState, Vector};

use super::cluster::Dataset;
use super::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; `0` freezes every parameter.
    pub lr: f64,
    /// Linear warmup length in steps, followed by linear decay to zero.
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 222,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 100,
            eval_every: 50,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn total_steps(tc: &TrainConfig, train_len: usize) -> usize {
    tc.epochs * train_len.div_ceil(tc.batch_size)
}

/// Learning rate for 0-based step `t` of `total`: `lr·(t+1)/warmup` during
/// warmup, then linear decay reaching zero after the last step.
pub fn lr_at(tc: &TrainConfig, t: usize, total: usize) -> f64 {
    if t < tc.warmup_steps {
        tc.lr * (t + 1) as f64 / tc.warmup_steps as f64
    } else {
        let span = total.saturating_sub(tc.warmup_steps).max(1);
        tc.lr * (total.saturating_sub(t)) as f64 / span as f64
    }
}

/// Routing state at one eval point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSnapshot {
    pub step: usize,
    pub eval_loss: f64,
    /// Mean gate vector over the eval split, per layer (empty for layers
    /// without a mixture).
    pub mean_gates: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub snapshots: Vec<RoutingSnapshot>,
    /// Path of the final checkpoint, filled in by the caller that writes it.
    pub checkpoint: Option<String>,
}

/// Mean eval loss; never mutates the stack.
pub fn evaluate(
    stack: &AdapterStack,
    model: &FrozenModel,
    data: &[Sample],
    loss: LossSpec,
) -> Result<f64> {
    batch_loss(stack, model, data, loss)
}

/// Per-layer mean gate vector over `data` (empty vectors for LoRA layers).
pub fn layer_mean_gates(
    stack: &AdapterStack,
    model: &FrozenModel,
    data: &[Sample],
) -> Result<Vec<Vector>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("routing data"));
    }
    let mut sums: Vec<Vector> = vec![Vec::new(); model.depth()];
    for s in data {
        let (_, traces) = model.forward_traced(stack, &s.input)?;
        for (acc, t) in sums.iter_mut().zip(traces) {
            if let Some(t) = t {
                if acc.is_empty() {
                    *acc = vec![0.0; t.gates.len()];
                }
                for (a, g) in acc.iter_mut().zip(&t.gates) {
                    *a += g;
                }
            }
        }
    }
    let n = data.len() as f64;
    for acc in &mut sums {
        for a in acc.iter_mut() {
            *a /= n;
        }
    }
    Ok(sums)
}

fn dropout_masks(model: &FrozenModel, p: f64, rng: &mut RngState) -> Vec<Vector> {
    let keep = 1.0 / (1.0 - p);
    model
        .layers()
        .iter()
        .map(|l| {
            (0..l.d_in())
                .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
                .collect()
        })
        .collect()
}

/// AdamW with linear warmup and decay over shuffled minibatches.
///
/// Each epoch reshuffles the training split with `rng` (samples inside a
/// minibatch are then taken in index order); dropout masks (when
/// the adapter dropout is positive) are drawn from the same stream, one
/// per sample and layer. A non-finite loss aborts with the step index.
pub fn train(
    stack: &mut AdapterStack,
    model: &FrozenModel,
    data: &Dataset,
    tc: &TrainConfig,
    loss: LossSpec,
    rng: &mut RngState,
) -> Result<TrainLog> {
    tc.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if data.eval.is_empty() {
        return Err(Error::EmptyInput("eval split"));
    }
    let total = total_steps(tc, data.train.len());
    let p = stack.config().dropout;
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: tc.weight_decay,
        ..AdamWConfig::default()
    });
    let mut log = TrainLog {
        losses: Vec::with_capacity(total),
        snapshots: Vec::new(),
        checkpoint: None,
    };
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0usize;
    for _ in 0..tc.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(tc.batch_size) {
            // Batch membership comes from the shuffle; summation order does not.
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let batch: Vec<Sample> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let masks: Option<Vec<Vec<Vector>>> = (p > 0.0)
                .then(|| batch.iter().map(|_| dropout_masks(model, p, rng)).collect());
            let (value, grads) =
                match backward_with_masks(stack, model, &batch, loss, masks.as_deref()) {
                    Ok(r) => r,
                    Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFinite(_)) => {
                        return Err(Error::Divergence { step })
                    }
                    Err(e) => return Err(e),
                };
            opt.step(stack, &grads, lr_at(tc, step, total))?;
            log.losses.push(value);
            step += 1;
            if step.is_multiple_of(tc.eval_every) || step == total {
                let eval_loss = match evaluate(stack, model, &data.eval, loss) {
                    Ok(v) => v,
                    Err(Error::NonFiniteLoss { .. }) | Err(Error::NonFinite(_)) => {
                        return Err(Error::Divergence { step })
                    }
                    Err(e) => return Err(e),
                };
                log.snapshots.push(RoutingSnapshot {
                    step,
                    eval_loss,
                    mean_gates: layer_mean_gates(stack, model, &data.eval)?,
                });
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let tc = TrainConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(&tc, 0, 12), 0.25);
        assert_eq!(lr_at(&tc, 3, 12), 1.0);
        assert_eq!(lr_at(&tc, 4, 12), 1.0);
        assert_eq!(lr_at(&tc, 8, 12), 0.5);
        assert_eq!(lr_at(&tc, 11, 12), 0.125);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let tc = TrainConfig {
            lr: 2.0,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(&tc, 0, 10), 2.0);
    }

    #[test]
    fn step_count() {
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        assert_eq!(total_steps(&tc, 100), 12);
    }

    #[test]
    fn invalid_config_names_field() {
        let tc = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        let err = tc.validate().unwrap_err().to_string();
        assert!(err.contains("batch_size"));
    }
}
