use thiserror::Error;

use crate::lmi::LmiError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    Definiteness(String),

    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("pole on the imaginary axis at omega = {0}")]
    PoleOnAxis(f64),

    #[error("unsupported channel: {0}")]
    UnsupportedChannel(String),

    #[error("simulation diverged at sample {sample} (state norm {norm:e}); shorten T or scale the plant")]
    Divergence { sample: usize, norm: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ellipsoid fit is unbounded: {0}")]
    Unbounded(String),

    #[error("solver accuracy fault: {0}")]
    SolverFault(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Lmi(#[from] LmiError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
