//! LoRA, MoELoRA and TalkLoRA adapters with exact forward and backward
//! math, plus the analyses around them: parameter budgets, routing
//! stability certificates, spectral audits of the communication matrix,
//! degeneracy checks and routing-load statistics.
//!
//! Everything runs in `f64` on small dense matrices. Start with the
//! runnable programs under `examples/`.

pub mod adapters;
pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod tasks;

pub use error::{Error, Result};
