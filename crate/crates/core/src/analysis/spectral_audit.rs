use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterStack, ProjectionTag};
use crate::linalg::{sigma_max, Matrix, BOUND_SLACK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub sigma_max: f64,
    /// `sigma_max ≤ 1 + 1e-9`.
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonexpansiveAudit {
    pub rows: Vec<AuditRow>,
    /// Fraction of rows within the unit ball (1.0 when there are none).
    pub fraction_within: f64,
}

/// `σ_max(C)` of every TalkLoRA site, in site order.
pub fn nonexpansive_audit(stack: &AdapterStack) -> NonexpansiveAudit {
    let rows: Vec<AuditRow> = stack
        .sites()
        .iter()
        .filter_map(|s| {
            let tl = s.talklora()?;
            let sigma = sigma_max(&tl.c);
            Some(AuditRow {
                layer: s.layer,
                tag: s.tag,
                sigma_max: sigma,
                within: sigma <= 1.0 + BOUND_SLACK,
            })
        })
        .collect();
    let fraction_within = if rows.is_empty() {
        1.0
    } else {
        rows.iter().filter(|r| r.within).count() as f64 / rows.len() as f64
    };
    NonexpansiveAudit {
        rows,
        fraction_within,
    }
}

/// `m / max|m_ij|`; a zero matrix is returned unchanged.
pub fn normalize_max_abs(m: &Matrix) -> Matrix {
    let mx = m.max_abs();
    if mx == 0.0 {
        m.clone()
    } else {
        let mut out = m.clone();
        for v in out.data_mut() {
            *v /= mx;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapEntry {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub matrix: Matrix,
}

/// Every `C` scaled into `[-1, 1]` by its largest absolute entry.
pub fn communication_heatmap(stack: &AdapterStack) -> Vec<HeatmapEntry> {
    stack
        .sites()
        .iter()
        .filter_map(|s| {
            Some(HeatmapEntry {
                layer: s.layer,
                tag: s.tag,
                matrix: normalize_max_abs(&s.talklora()?.c),
            })
        })
        .collect()
}
