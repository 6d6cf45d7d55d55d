//! Forward semantics of the three adapter families and the adapter stack.
//!
//! * LoRA: `y = W₀x + (α/r)·BAx`
//! * MoELoRA: `y = W₀x + (α/r)·Σ g_i(x)·B_iA_ix`, `g = softmax(W_g x)`
//! * TalkLoRA: `y = W₀x + (α/r)·Σ g_i·B_iE_iA_ix`, with
//!   `g = softmax(W_g·[h̃_1..h̃_n])` and `h̃_i = Σ_j C_ij A_jx`

mod config;
mod frozen;
mod lora;
mod moelora;
mod stack;
mod talklora;

use serde::{Deserialize, Serialize};

pub use config::{AdapterConfig, AdapterMethod, ProjectionTag};
pub use frozen::{FrozenLinear, FrozenModel};
pub use lora::{lora_forward, lora_merge, LoraAdapter};
pub use moelora::{moelora_forward, MoeLoraLayer};
pub use stack::{
    build_adapter_stack, AdapterSite, AdapterStack, ParamHandle, ParamOwner, ParamRole,
    SharedProjectionStore, SiteAdapter, SiteSpec,
};
pub use talklora::{clip_spectral_norm, talking_mix, talklora_forward, TalkLoraLayer, UpProjections};

use crate::linalg::Vector;

/// Intermediate values of a mixture forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Per-expert projections `h_i = A_i x`.
    pub h: Vec<Vector>,
    /// Router-side representations (equal to `h` without communication).
    pub h_tilde: Vec<Vector>,
    /// Gate vector on the simplex.
    pub gates: Vector,
    /// Unweighted expert outputs `y_i`.
    pub expert_outputs: Vec<Vector>,
    /// Scaled adapter contribution `(α/r)·Σ g_i y_i`.
    pub delta: Vector,
    pub y: Vector,
}

/// `Σ g_i y_i`, accumulated in expert order starting from the first term.
pub(crate) fn gated_sum(gates: &[f64], outputs: &[Vector]) -> Vector {
    let mut acc: Vector = outputs[0].iter().map(|v| gates[0] * v).collect();
    for (g, y) in gates.iter().zip(outputs).skip(1) {
        for (a, v) in acc.iter_mut().zip(y) {
            *a += g * v;
        }
    }
    acc
}
