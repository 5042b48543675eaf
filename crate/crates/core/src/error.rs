use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape, range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A quantity that must be real or non-negative up to rounding was not.
    #[error("numerical integrity: {0}")]
    NumericalIntegrity(String),

    #[error("eigen-solver did not converge within {cap} QL iterations (eigenvalue index {index})")]
    EigenNonConvergence { cap: usize, index: usize },

    /// The top eigenvalue of the pseudo-Hamiltonian is degenerate, so there is
    /// no unique ground state.
    #[error("no unique ground state: top spectral gap {gap:.3e} is below {tolerance:.1e}")]
    NotUniqueGroundState { gap: f64, tolerance: f64 },

    #[error("iterative solver did not converge after {sweeps} sweeps (final residual {residual:.3e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalIntegrity(_)
                | Error::EigenNonConvergence { .. }
                | Error::NotUniqueGroundState { .. }
                | Error::NonConvergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
