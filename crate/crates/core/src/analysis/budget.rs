use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterMethod, ProjectionTag};
use crate::error::Result;
use crate::geometry::ModelGeometry;

/// Trainable-parameter budget of an adapter configuration on a geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBudget {
    pub model: String,
    pub method: AdapterMethod,
    pub trainable: u64,
    pub total: u64,
    /// `100·trainable/total`.
    pub percent: f64,
    /// Trainable scalars per tensor role; sums to `trainable`.
    pub breakdown: BTreeMap<String, u64>,
}

/// Closed-form count of every trainable scalar.
///
/// Per (layer, target): LoRA `r(d_in+d_out)`; MoELoRA adds the router
/// `n·d_in`; TalkLoRA has `r·d_in` (A), `r²/n` (E), `n²` (C, only when
/// talking), `n·r` (router), and its `B` (`d_out·r`) once per target when
/// shared or once per layer otherwise.
pub fn count_params(
    geom: &ModelGeometry,
    method: AdapterMethod,
    cfg: &AdapterConfig,
    targets: &[ProjectionTag],
) -> Result<ParamBudget> {
    geom.validate()?;
    cfg.validate()?;
    let dims = geom.target_dims(targets)?;
    let (r, n) = (cfg.rank as u64, cfg.experts as u64);
    let layers = geom.layers as u64;
    let mut breakdown: BTreeMap<String, u64> = BTreeMap::new();
    let mut add = |key: &str, v: u64| *breakdown.entry(key.to_string()).or_insert(0) += v;
    for d in &dims {
        cfg.validate_for(d.d_in, d.d_out)?;
        let (din, dout) = (d.d_in as u64, d.d_out as u64);
        match method {
            AdapterMethod::Lora => {
                add("lora_A", layers * r * din);
                add("lora_B", layers * r * dout);
            }
            AdapterMethod::MoeLora => {
                add("A", layers * r * din);
                add("B", layers * r * dout);
                add("router", layers * n * din);
            }
            AdapterMethod::TalkLora => {
                add("A", layers * r * din);
                add("E", layers * r * r / n);
                if cfg.talking_enabled {
                    add("C", layers * n * n);
                }
                add("router", layers * n * r);
                add("B", if cfg.share_b { dout * r } else { layers * dout * r });
            }
        }
    }
    let trainable = breakdown.values().sum();
    Ok(ParamBudget {
        model: geom.name.clone(),
        method,
        trainable,
        total: geom.total_params,
        percent: 100.0 * trainable as f64 / geom.total_params as f64,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_talklora_budget() {
        let geom = ModelGeometry::builtin("toy").unwrap();
        let b = count_params(
            &geom,
            AdapterMethod::TalkLora,
            &AdapterConfig::new(4, 2),
            &[ProjectionTag::Q],
        )
        .unwrap();
        assert_eq!(b.trainable, 136);
        assert_eq!(b.breakdown["B"], 32);
        assert_eq!(b.breakdown.values().sum::<u64>(), b.trainable);
    }

    #[test]
    fn unsharing_counts_b_per_layer() {
        let geom = ModelGeometry::builtin("toy").unwrap();
        let cfg = AdapterConfig::new(4, 2).with_share_b(false);
        let b = count_params(&geom, AdapterMethod::TalkLora, &cfg, &[ProjectionTag::Q]).unwrap();
        assert_eq!(b.trainable, 136 + 32);
    }

    #[test]
    fn talking_off_drops_c() {
        let geom = ModelGeometry::builtin("toy").unwrap();
        let cfg = AdapterConfig::new(4, 2).with_talking(false);
        let b = count_params(&geom, AdapterMethod::TalkLora, &cfg, &[ProjectionTag::Q]).unwrap();
        assert_eq!(b.trainable, 136 - 8);
        assert!(!b.breakdown.contains_key("C"));
    }
}
