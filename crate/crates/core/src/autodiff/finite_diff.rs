use serde::Serialize;

use crate::adapters::{AdapterStack, FrozenModel, ParamHandle};
use crate::error::{Error, Result};
use crate::linalg::RngState;
use crate::tasks::Sample;

use super::backward::{backward, batch_loss};
use super::grads::GradientSet;
use super::loss::LossSpec;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every trainable scalar.
///
/// A shared `B` is perturbed in the store, so its estimate already carries
/// the contribution of every aliasing layer.
pub fn finite_difference_oracle(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
    epsilon: f64,
) -> Result<GradientSet> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::config("epsilon", "must lie in [1e-7, 1e-3]"));
    }
    let mut work = stack.clone();
    let mut grads = GradientSet::zeros_like(stack);
    let handles: Vec<ParamHandle> = grads.handles().copied().collect();
    for h in handles {
        let len = work.param(&h).map_or(0, |m| m.len());
        for k in 0..len {
            let orig = work.param(&h).expect("handle").data()[k];
            work.param_mut(&h).expect("handle").data_mut()[k] = orig + epsilon;
            let fp = batch_loss(&work, model, batch, loss)?;
            work.param_mut(&h).expect("handle").data_mut()[k] = orig - epsilon;
            let fm = batch_loss(&work, model, batch, loss)?;
            work.param_mut(&h).expect("handle").data_mut()[k] = orig;
            grads.slot(&h).data_mut()[k] = (fp - fm) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Handle and flat index of the worst entry.
    pub worst: Option<(ParamHandle, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub scalars_checked: usize,
    pub loss: f64,
    pub passed: bool,
}

/// Compares [`backward`] against [`finite_difference_oracle`].
pub fn gradcheck(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
    epsilon: f64,
) -> Result<GradcheckReport> {
    gradcheck_with(stack, model, batch, loss, epsilon, |_| {})
}

/// As [`gradcheck`], letting `tamper` edit the analytic gradients first
/// (negative controls).
pub fn gradcheck_with(
    stack: &AdapterStack,
    model: &FrozenModel,
    batch: &[Sample],
    loss: LossSpec,
    epsilon: f64,
    tamper: impl FnOnce(&mut GradientSet),
) -> Result<GradcheckReport> {
    let (value, mut analytic) = backward(stack, model, batch, loss)?;
    tamper(&mut analytic);
    let numeric = finite_difference_oracle(stack, model, batch, loss, epsilon)?;
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        scalars_checked: 0,
        loss: value,
        passed: true,
    };
    for (h, ga) in analytic.iter() {
        let gn = numeric.get(h).expect("same key set");
        for (k, (&a, &b)) in ga.data().iter().zip(gn.data()).enumerate() {
            report.scalars_checked += 1;
            let e = relative_error(a, b);
            if e > report.max_relative_error || report.worst.is_none() || e.is_nan() {
                report.max_relative_error = e;
                report.worst = Some((*h, k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = b;
            }
        }
    }
    report.passed = report.max_relative_error < GRADCHECK_TOLERANCE;
    Ok(report)
}

/// Fills every trainable tensor with `N(0, std²)` draws, in handle order.
/// Gradient checks need non-zero `B`; fresh stacks have `B = 0`.
pub fn randomize_parameters(stack: &mut AdapterStack, std: f64, rng: &mut RngState) {
    for h in stack.param_handles() {
        let m = stack.param_mut(&h).expect("handle from stack");
        for v in m.data_mut() {
            *v = std * rng.normal();
        }
    }
}
