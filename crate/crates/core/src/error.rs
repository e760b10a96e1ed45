use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("batch index {index} out of range for a dataset of {len} points")]
    BatchIndex { index: usize, len: usize },

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    /// Some `alpha * lambda_i == 1`: the step collapses a direction to a point
    /// and the entropy change is minus infinity.
    #[error("singular step Jacobian (entropy change is -inf); smallest |pivot| = {min_pivot:e}")]
    SingularJacobian { min_pivot: f64 },

    #[error("dense Hessian of dimension {dim} exceeds the cap of {cap}")]
    HessianCap { dim: usize, cap: usize },

    #[error("training diverged at step {step}: non-finite {what} (alpha * |lambda|_max ~ {alpha_lambda_max:.4})")]
    Diverged {
        step: usize,
        what: &'static str,
        alpha_lambda_max: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("IDX {which} file {}: {msg}", path.display())]
    Idx {
        which: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { what })
    }
}
