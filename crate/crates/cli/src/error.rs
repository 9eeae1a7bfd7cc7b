use photon_dfa_bench::BenchError;
use photon_dfa_core::Error as CoreError;
use thiserror::Error;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2.
    #[error("{0}")]
    Config(String),
    /// Exit 3.
    #[error("{0}")]
    Data(String),
    /// Exit 4.
    #[error("{0}")]
    Numerical(String),
    /// Exit 4. The report is written before this is returned.
    #[error("diagnostic out of tolerance: {0}")]
    Diagnostic(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) | CliError::Diagnostic(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_)
            | CoreError::Dimension { .. }
            | CoreError::InvalidShape { .. }
            | CoreError::MissingThreshold
            | CoreError::WrongNoiseKind { .. }
            | CoreError::NotEncodable { .. }
            | CoreError::IndexOutOfRange { .. } => CliError::Config(msg),
            CoreError::Format(_) | CoreError::Io(_) | CoreError::Json(_) => CliError::Data(msg),
            CoreError::Numerical(_)
            | CoreError::UndefinedCorrelation(_)
            | CoreError::ZeroVector(_)
            | CoreError::DegenerateAnchor { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        let msg = e.to_string();
        match e {
            BenchError::Core(inner) => inner.into(),
            BenchError::Corrupt { .. } | BenchError::Io(_) => CliError::Data(msg),
            BenchError::Capacity { .. } | BenchError::Invalid(_) | BenchError::GridMismatch(_) => CliError::Config(msg),
            BenchError::Degenerate(_) => CliError::Numerical(msg),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
