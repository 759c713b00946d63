use std::path::{Path, PathBuf};

/// Failures surfaced by the command-line pipeline, each with a fixed exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid artifact {}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::MissingArtifact(_) => 4,
            Self::Io { .. } | Self::Corrupt { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingArtifact(path.to_path_buf())
        } else {
            Self::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn corrupt(path: &Path, reason: impl std::fmt::Display) -> Self {
        Self::Corrupt { path: path.to_path_buf(), reason: reason.to_string() }
    }
}

impl From<con2_core::Error> for CliError {
    fn from(e: con2_core::Error) -> Self {
        use con2_core::Error as E;
        match e {
            E::NonFiniteLoss { .. } | E::SingularCovariance { .. } => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
