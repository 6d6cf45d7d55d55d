//! Command implementations behind the `talklora` binary, plus the run
//! config and the checkpoint format.
//!
//! Exit codes: 0 success, 2 config or input error, 3 numerical failure,
//! 4 artifact corruption.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{
    bit_identical, decode, encode, load_checkpoint, read_header, save_checkpoint, AliasEntry,
    Checkpoint, CheckpointHeader, TensorRecord, FORMAT_VERSION, MAGIC,
};
pub use commands::{
    analyze_checkpoint, build_run, cmd_analyze, cmd_ckpt_inspect, cmd_ckpt_roundtrip,
    cmd_gradcheck, cmd_params, cmd_train, gradcheck_instance, gradcheck_outcome, gradcheck_suite,
    loss_csv, routing_csv, AnalyzeOptions, AnalyzeOutputs, GradcheckCase, GradcheckConfig,
    GradcheckSummary, RoundtripReport, SiteCertificate, SiteDegeneracy, Subreport, TrainOutputs,
    GRADCHECK_MAX_DIM, HEATMAP_SCHEMA, LOSS_SCHEMA, NONEXPANSIVE_SCHEMA, ROUTING_LOAD_SCHEMA,
    ROUTING_SCHEMA,
};
pub use config::{streams, ModelConfig, RunConfig, TargetSpec};

use crate::adapters::AdapterMethod;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ARTIFACT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("gradient check failed for {method}: max relative error {max_relative_error:e} at {handle}")]
    GradcheckFailed {
        max_relative_error: f64,
        handle: String,
        method: AdapterMethod,
    },

    #[error("checkpoint roundtrip is not bit-identical")]
    RoundtripMismatch,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => exit_code_for(e),
            CliError::GradcheckFailed { .. } => EXIT_NUMERICAL,
            CliError::RoundtripMismatch => EXIT_ARTIFACT,
        }
    }
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_)
        | Error::NotConverged { .. }
        | Error::NonFiniteLoss { .. }
        | Error::Divergence { .. } => EXIT_NUMERICAL,
        Error::Checkpoint(_) => EXIT_ARTIFACT,
        Error::ShapeMismatch { .. }
        | Error::EmptyInput(_)
        | Error::InvalidConfig { .. }
        | Error::UnknownTarget(_)
        | Error::UnknownMethod(_)
        | Error::Io { .. }
        | Error::Json(_) => EXIT_CONFIG,
    }
}
