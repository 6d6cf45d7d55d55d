use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kaiming_init, softmax, zero_init, Matrix, RngState, Vector};

use super::config::AdapterConfig;
use super::frozen::FrozenLinear;
use super::{gated_sum, ForwardTrace};

/// `n` independent LoRA experts `(A_i: r_e×d, B_i: k×r_e)` mixed by a softmax
/// router `W_g (n×d)` over the raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeLoraLayer {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub router: Matrix,
}

impl MoeLoraLayer {
    /// Per expert Kaiming `A_i`, then Kaiming router; all `B_i` zero.
    pub fn new(d_in: usize, d_out: usize, cfg: &AdapterConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate_for(d_in, d_out)?;
        let re = cfg.expert_rank();
        let a = (0..cfg.experts).map(|_| kaiming_init(re, d_in, rng)).collect();
        let router = kaiming_init(cfg.experts, d_in, rng);
        let b = (0..cfg.experts).map(|_| zero_init(d_out, re)).collect();
        Ok(Self { a, b, router })
    }

    pub fn experts(&self) -> usize {
        self.a.len()
    }

    fn check(&self, d_in: usize, cfg: &AdapterConfig) -> Result<()> {
        let (n, re) = (cfg.experts, cfg.expert_rank());
        let d_out = self.b.first().map_or(0, Matrix::rows);
        let ok = self.a.len() == n
            && self.b.len() == n
            && self.a.iter().all(|a| a.shape() == (re, d_in))
            && self.b.iter().all(|b| b.shape() == (d_out, re))
            && self.router.shape() == (n, d_in);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "moelora",
                left: (n, re),
                right: (self.a.len(), self.b.len()),
            });
        }
        Ok(())
    }

    /// Router gates `softmax(W_g x)`.
    pub fn gates(&self, x: &[f64]) -> Result<Vector> {
        softmax(&self.router.matvec(x)?)
    }
}

/// `y = W₀x + (α/r)·Σ g_i(x)·B_iA_ix`, `g = softmax(W_g x)`.
pub fn moelora_forward(
    layer: &FrozenLinear,
    ml: &MoeLoraLayer,
    x: &[f64],
    cfg: &AdapterConfig,
) -> Result<(Vector, ForwardTrace)> {
    if ml.b.first().map(Matrix::rows) != Some(layer.d_out()) {
        return Err(Error::ShapeMismatch {
            op: "moelora",
            left: layer.w0().shape(),
            right: ml.b.first().map_or((0, 0), Matrix::shape),
        });
    }
    let base = layer.apply(x)?;
    let mut trace = moelora_delta(ml, x, cfg)?;
    trace.y = base.iter().zip(&trace.delta).map(|(b, d)| b + d).collect();
    Ok((trace.y.clone(), trace))
}

/// Adapter-only pass; the returned trace has an empty `y`.
pub(crate) fn moelora_delta(ml: &MoeLoraLayer, x: &[f64], cfg: &AdapterConfig) -> Result<ForwardTrace> {
    ml.check(x.len(), cfg)?;
    let h = ml
        .a
        .iter()
        .map(|a| a.matvec(x))
        .collect::<Result<Vec<_>>>()?;
    let expert_outputs = ml
        .b
        .iter()
        .zip(&h)
        .map(|(b, hi)| b.matvec(hi))
        .collect::<Result<Vec<_>>>()?;
    let gates = ml.gates(x)?;
    let s = cfg.scale();
    let delta: Vector = gated_sum(&gates, &expert_outputs)
        .into_iter()
        .map(|v| s * v)
        .collect();
    Ok(ForwardTrace {
        h_tilde: h.clone(),
        h,
        gates,
        expert_outputs,
        delta,
        y: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::lora::{lora_forward, LoraAdapter};

    #[test]
    fn zero_b_preserves_output() {
        let cfg = AdapterConfig::new(4, 2);
        let layer = FrozenLinear::new(Matrix::from_fn(5, 6, |i, j| (i + 2 * j) as f64 * 0.1));
        let ml = MoeLoraLayer::new(6, 5, &cfg, &mut RngState::new(3)).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let (y, trace) = moelora_forward(&layer, &ml, &x, &cfg).unwrap();
        assert_eq!(y, layer.apply(&x).unwrap());
        assert!((trace.gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_expert_collapses_to_lora() {
        let cfg = AdapterConfig::new(2, 1).with_alpha(3.0);
        let layer = FrozenLinear::new(Matrix::from_fn(3, 3, |i, j| (i as f64) - (j as f64)));
        let mut ml = MoeLoraLayer::new(3, 3, &cfg, &mut RngState::new(9)).unwrap();
        ml.b[0] = Matrix::from_fn(3, 2, |i, j| 0.2 * (i + j) as f64 - 0.1);
        let lora = LoraAdapter {
            a: ml.a[0].clone(),
            b: ml.b[0].clone(),
        };
        let x = [0.5, -0.25, 2.0];
        let (y, trace) = moelora_forward(&layer, &ml, &x, &cfg).unwrap();
        assert_eq!(trace.gates, vec![1.0]);
        assert_eq!(y, lora_forward(&layer, &lora, &x, &cfg).unwrap());
    }
}
