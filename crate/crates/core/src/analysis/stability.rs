use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, TalkLoraLayer};
use crate::error::{Error, Result};
use crate::linalg::{norm2, sigma_max, RngState, BOUND_SLACK};

/// Empirical check of the routing Lipschitz bound
/// `‖g(x+δx) − g(x)‖ ≤ αβ‖δx‖` for one TalkLoRA layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    /// `σ_max` of the stacked `A` (the full `r×d` projection).
    pub alpha: f64,
    /// `σ_max(W_g)`.
    pub beta: f64,
    /// `σ_max` of the communication operator in use (`I` without talking).
    pub c_norm: f64,
    /// `alpha·beta`.
    pub bound: f64,
    pub trials: usize,
    pub max_observed_ratio: f64,
    /// Trials with `‖Δg‖ > bound·‖δx‖·(1+1e-9)`.
    pub violations: usize,
    /// `c_norm ≤ 1` (up to slack): the bound is only claimed in this case.
    pub assumptions_hold: bool,
    /// `assumptions_hold` and `max_observed_ratio ≤ bound·(1+1e-9)`.
    pub verdict: bool,
}

/// Samples `x ~ N(0, I)` and `δx ~ delta_scale·N(0, I)` `trials` times.
///
/// Softmax is taken as 1-Lipschitz in the Euclidean norm, so the bound
/// needs no extra constant.
pub fn stability_certificate(
    tl: &TalkLoraLayer,
    cfg: &AdapterConfig,
    trials: usize,
    delta_scale: f64,
    rng: &mut RngState,
) -> Result<StabilityCertificate> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    if !(delta_scale >= 0.0 && delta_scale.is_finite()) {
        return Err(Error::config("delta_scale", "must be finite and >= 0"));
    }
    let alpha = sigma_max(&tl.stacked_a());
    let beta = sigma_max(&tl.router);
    let c_norm = sigma_max(&tl.effective_c(cfg));
    let bound = alpha * beta;
    let d = tl.d_in();
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trials {
        let x = rng.normal_vec(d, 1.0);
        let dx = rng.normal_vec(d, delta_scale);
        let xp: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let g0 = tl.gates(&x, cfg)?;
        let g1 = tl.gates(&xp, cfg)?;
        let diff: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let dg = norm2(&diff);
        let ndx = norm2(&dx);
        if dg > bound * ndx * (1.0 + BOUND_SLACK) {
            violations += 1;
        }
        if ndx > 0.0 {
            max_ratio = max_ratio.max(dg / ndx);
        }
    }
    let assumptions_hold = c_norm <= 1.0 + BOUND_SLACK;
    Ok(StabilityCertificate {
        alpha,
        beta,
        c_norm,
        bound,
        trials,
        max_observed_ratio: max_ratio,
        violations,
        assumptions_hold,
        verdict: assumptions_hold && max_ratio <= bound * (1.0 + BOUND_SLACK),
    })
}
