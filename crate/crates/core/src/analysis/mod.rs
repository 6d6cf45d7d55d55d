//! Parameter budgets, routing-stability certificates, spectral audits of
//! the communication matrices, degeneracy checks and routing statistics.

mod budget;
mod degeneracy;
mod routing;
mod spectral_audit;
mod stability;

pub use budget::{count_params, ParamBudget};
pub use degeneracy::{degeneracy_check, DegeneracyReport};
pub use routing::{entropy, routing_load, LayerRouting, RoutingLoadReport};
pub use spectral_audit::{
    communication_heatmap, nonexpansive_audit, normalize_max_abs, AuditRow, HeatmapEntry,
    NonexpansiveAudit,
};
pub use stability::{stability_certificate, StabilityCertificate};

pub use crate::geometry::ModelGeometry;
