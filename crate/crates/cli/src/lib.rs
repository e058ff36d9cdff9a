//! Batch runner for the SQS experiments: sampler runs over a sweep of box
//! sizes, the contrast table, and the Gaussian-model checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_analytic, cmd_run, cmd_table1};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sqs_core::Error),
    #[error("checks failed: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 config, 3 solver failure, 4 rejection cap, 5 failed check, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_solver_failure() => 3,
            CliError::Core(sqs_core::Error::RejectionCapExceeded { .. }) => 4,
            CliError::Core(
                sqs_core::Error::InvalidSpec(_)
                | sqs_core::Error::InvalidDomain(_)
                | sqs_core::Error::UnsupportedLaw(_)
                | sqs_core::Error::ExactBalanceImpossible { .. }
                | sqs_core::Error::UnresolvedCoefficientTable { .. },
            ) => 2,
            CliError::CheckFailed(_) => 5,
            _ => 1,
        }
    }
}
