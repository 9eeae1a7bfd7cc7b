use thiserror::Error;

use crate::opu::NoiseKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("zero vector passed to {0}")]
    ZeroVector(&'static str),

    #[error("degenerate anchor: pixel {pixel} has intensity {intensity:e}")]
    DegenerateAnchor { pixel: usize, intensity: f64 },

    #[error("operation requires noise kind {expected:?}, session has {actual:?}")]
    WrongNoiseKind {
        expected: NoiseKind,
        actual: NoiseKind,
    },

    #[error("encoder input {value} at position {index} is not displayable")]
    NotEncodable { index: usize, value: f64 },

    #[error("no ternarization threshold selected")]
    MissingThreshold,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Shape mismatch between the two operands of `op`.
    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
