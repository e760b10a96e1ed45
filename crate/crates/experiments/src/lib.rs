//! Experiment driver for `sgdvi`: training curves, hyperparameter sweeps,
//! 2-D particle clouds, ensembles and a self-check of the estimators.
//!
//! Every command writes curve files whose header echoes the resolved
//! configuration; `replay` regenerates them byte for byte.

pub mod commands;
pub mod curve;
pub mod oracle;
pub mod spec;

pub use commands::{replay, run_command, Command};
pub use curve::CurveFile;
pub use spec::ExperimentSpec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input files; exit code 2.
    #[error("{0}")]
    Config(String),
    /// A run failed after starting; exit code 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl From<sgdvi::Error> for CliError {
    fn from(e: sgdvi::Error) -> Self {
        use sgdvi::Error as E;
        match e {
            E::Config(_) | E::Parse { .. } | E::Idx { .. } | E::Io(_) | E::Unsupported(_) | E::HessianCap { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Run(other.to_string()),
        }
    }
}
