//! Orchestration: configuration, the train/eval/inspect/render commands,
//! checkpoint files with metadata, static plots, and the oracle suites.

mod config;
mod oracle;
mod render;
mod run;

pub use config::{DsacSection, OrcaSection, Overrides, RunConfig, RunSection, SimSection};
pub use oracle::{
    run_suite, soft_policy_value, OracleCheck, OracleSuite, SoftViOracle, TabularMdp,
};
pub use render::{
    moving_average, parse_trajectory_csv, render_reward_curve, render_trajectories, AgentMeta,
    TrajRow,
};
pub use run::{
    checkpoint_path, cmd_eval, cmd_inspect, cmd_train, load_checkpoint, save_checkpoint,
    AttentionRow, CheckpointMeta, EpisodeRecord, EvalOutput, EvalSummary, InspectOutput,
    TrainOutput,
};

use crate::diffcore::{CheckpointError, DiffError};
use crate::dsac::{DsacError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error:\n{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dsac(#[from] DsacError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(
        "checkpoint was trained with encoder {checkpoint}, but the requested configuration \
         uses {requested}"
    )]
    VariantMismatch {
        checkpoint: String,
        requested: String,
    },
    #[error("encoder {encoder} has no attention scores")]
    NoAttention { encoder: String },
    #[error("{0}")]
    CheckFailed(String),
}

impl HarnessError {
    /// Process exit code: 2 for usage and configuration problems, 1 for
    /// runtime and check failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Usage(_)
            | HarnessError::VariantMismatch { .. }
            | HarnessError::NoAttention { .. } => 2,
            _ => 1,
        }
    }
}
