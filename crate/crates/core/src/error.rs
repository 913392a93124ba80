use thiserror::Error;

use crate::estimator::SparseCoeffs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("configuration violates bound: {0}")]
    Bound(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("unknown profile `{0}` (expected desk or table3)")]
    UnknownProfile(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("frame {frame} outside the generated range of {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("selected columns are rank deficient after {selected} blocks")]
    DegenerateSupport { selected: usize, partial: Box<SparseCoeffs> },
    #[error("reference channel has zero energy")]
    ZeroNorm,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
