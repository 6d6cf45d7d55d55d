use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterMethod, AdapterStack, FrozenModel};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::tasks::{layer_mean_gates, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRouting {
    pub layer: usize,
    pub mean_gates: Vector,
    /// Shannon entropy (natural log) of `mean_gates`, in `[0, ln n]`.
    pub entropy: f64,
    pub max_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingLoadReport {
    pub layers: Vec<LayerRouting>,
    /// Coefficient of variation (population std / mean) of the expert loads
    /// averaged over layers.
    pub load_cv: f64,
}

impl RoutingLoadReport {
    pub fn mean_entropy(&self) -> f64 {
        self.layers.iter().map(|l| l.entropy).sum::<f64>() / self.layers.len() as f64
    }
}

/// `−Σ p ln p` with `0 ln 0 = 0`, clamped to `[0, ln n]`.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>();
    h.clamp(0.0, (p.len() as f64).ln())
}

pub fn routing_load(
    stack: &AdapterStack,
    model: &FrozenModel,
    data: &[Sample],
) -> Result<RoutingLoadReport> {
    if stack.method() == AdapterMethod::Lora {
        return Err(Error::config("method", "plain LoRA has no router"));
    }
    let per_layer = layer_mean_gates(stack, model, data)?;
    let layers: Vec<LayerRouting> = per_layer
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(layer, g)| LayerRouting {
            layer,
            entropy: entropy(&g),
            max_share: g.iter().copied().fold(0.0, f64::max),
            mean_gates: g,
        })
        .collect();
    if layers.is_empty() {
        return Err(Error::config("targets", "no routed layers in the model"));
    }
    let n = layers[0].mean_gates.len();
    let loads: Vec<f64> = (0..n)
        .map(|i| layers.iter().map(|l| l.mean_gates[i]).sum::<f64>() / layers.len() as f64)
        .collect();
    let mean = loads.iter().sum::<f64>() / n as f64;
    let var = loads.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(RoutingLoadReport {
        layers,
        load_cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
    })
}
