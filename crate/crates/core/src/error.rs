use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("integration produced a non-finite value at t = {t}")]
    Integration { t: f64 },

    #[error("state diverged at step {step} (|x| = {norm:e} > {bound:e})")]
    Diverged { step: usize, norm: f64, bound: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Riccati solver did not converge (residual {residual:e}): {reason}")]
    Riccati { residual: f64, reason: String },

    #[error(
        "non-finite training loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:e})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Whether the failure is numerical (divergence, non-convergence) rather
    /// than caused by bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. }
                | Error::Diverged { .. }
                | Error::Numerical(_)
                | Error::Riccati { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}
