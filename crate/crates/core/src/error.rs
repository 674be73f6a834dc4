use thiserror::Error;

use crate::spin::Frame;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin quantum number 2I must be at least 1, got {0}")]
    InvalidSpin(u32),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("pulse sequence is empty")]
    EmptySequence,
    #[error("invalid acquisition: {0}")]
    InvalidAcquisition(String),
    #[error("no equilibrium reference available for normalization")]
    MissingReference,
    #[error("invalid gate target: {0}")]
    InvalidTarget(String),
    #[error("unknown gate '{0}'")]
    UnknownGate(String),
    #[error("missing pulse sequence for gate {0}")]
    MissingGate(String),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scan data: {0}")]
    InvalidScanData(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
