use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("capacity exceeded: {what} needs {bytes} bytes, limit is {limit}")]
    Capacity { what: String, bytes: u64, limit: u64 },

    #[error("invalid benchmark request: {0}")]
    Invalid(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("corrupt results file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error(transparent)]
    Core(#[from] photon_dfa_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
