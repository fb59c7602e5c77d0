use std::path::PathBuf;

/// Errors surfaced by the pipeline and the command line.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    NotConverged(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] daeopt_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status: 2 invalid configuration, 3 non-convergence,
    /// 4 missing artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) | CliError::Core(daeopt_core::Error::InvalidConfig(_)) => 2,
            CliError::NotConverged(_) => 3,
            CliError::MissingArtifact(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
