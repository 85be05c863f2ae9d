use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reservoir, encoder, readout and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("spectral radius {0:e} of the sparsified recurrent matrix is too small to rescale")]
    DegenerateSpectrum(f64),

    #[error("washout of {washout} steps leaves no data in a sequence of length {length}")]
    WashoutTooLong { washout: usize, length: usize },

    #[error("normal matrix of the readout regression is singular")]
    SingularSystem,

    #[error("target series is constant; NRMSE is undefined")]
    ConstantTarget,

    #[error("zero denominator in MAPE at sample {0}")]
    ZeroDenominator(usize),

    #[error("split {train}+{validate}+{test} exceeds usable length {available}")]
    SplitOverflow {
        train: usize,
        validate: usize,
        test: usize,
        available: usize,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported model schema version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
