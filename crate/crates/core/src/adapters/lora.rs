use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kaiming_init, zero_init, Matrix, RngState, Vector};

use super::config::AdapterConfig;
use super::frozen::FrozenLinear;

/// Plain LoRA update `ΔW = B·A`, `A (r×d)`, `B (k×r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub a: Matrix,
    pub b: Matrix,
}

impl LoraAdapter {
    /// Kaiming `A`, zero `B`.
    pub fn new(d_in: usize, d_out: usize, cfg: &AdapterConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate_for(d_in, d_out)?;
        Ok(Self {
            a: kaiming_init(cfg.rank, d_in, rng),
            b: zero_init(d_out, cfg.rank),
        })
    }

    fn check(&self, layer: &FrozenLinear, cfg: &AdapterConfig) -> Result<()> {
        let r = cfg.rank;
        if self.a.shape() != (r, layer.d_in()) || self.b.shape() != (layer.d_out(), r) {
            return Err(Error::ShapeMismatch {
                op: "lora",
                left: self.a.shape(),
                right: self.b.shape(),
            });
        }
        Ok(())
    }

    /// `(α/r)·B·A·x`.
    pub fn delta(&self, x: &[f64], cfg: &AdapterConfig) -> Result<Vector> {
        if self.a.rows() != cfg.rank || self.b.cols() != cfg.rank {
            return Err(Error::ShapeMismatch {
                op: "lora",
                left: self.a.shape(),
                right: self.b.shape(),
            });
        }
        let h = self.a.matvec(x)?;
        let up = self.b.matvec(&h)?;
        let s = cfg.scale();
        Ok(up.into_iter().map(|v| s * v).collect())
    }
}

/// `y = W₀x + (α/r)·B·A·x`.
pub fn lora_forward(
    layer: &FrozenLinear,
    ad: &LoraAdapter,
    x: &[f64],
    cfg: &AdapterConfig,
) -> Result<Vector> {
    ad.check(layer, cfg)?;
    let base = layer.apply(x)?;
    let delta = ad.delta(x, cfg)?;
    Ok(base.iter().zip(&delta).map(|(b, d)| b + d).collect())
}

/// `W' = W₀ + (α/r)·B·A`.
pub fn lora_merge(layer: &FrozenLinear, ad: &LoraAdapter, cfg: &AdapterConfig) -> Result<Matrix> {
    ad.check(layer, cfg)?;
    let ba = ad.b.matmul(&ad.a)?.scale(cfg.scale());
    layer.w0().add(&ba)
}
