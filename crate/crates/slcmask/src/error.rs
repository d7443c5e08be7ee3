use std::path::{Path, PathBuf};

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration, or an IO failure (exit 2).
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A corpus, annotation or checkpoint file that does not parse (exit 3).
    #[error("{path}: corrupt data at byte offset {offset}: {msg}")]
    Corrupt { path: PathBuf, offset: usize, msg: String },
    /// Non-finite values during training or inference (exit 4).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Analytic and measured receptive fields disagree (exit 1).
    #[error("{0}")]
    Mismatch(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Corrupt { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Mismatch(_) => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn corrupt(path: &Path, offset: usize, msg: impl Into<String>) -> Self {
        CliError::Corrupt { path: path.to_path_buf(), offset, msg: msg.into() }
    }

    /// Classifies a core error raised while processing `path`.
    pub fn from_core(path: &Path, e: slcmask_core::Error) -> Self {
        use slcmask_core::Error as E;
        match e {
            E::Decode { offset, msg } => CliError::corrupt(path, offset, msg),
            E::NumericalFailure { .. } | E::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Usage(format!("{}: {other}", path.display())),
        }
    }
}

impl From<slcmask_core::Error> for CliError {
    fn from(e: slcmask_core::Error) -> Self {
        use slcmask_core::Error as E;
        match e {
            E::NumericalFailure { .. } | E::NonFinite { .. } => CliError::Numerical(e.to_string()),
            E::Decode { offset, msg } => CliError::Corrupt { path: PathBuf::new(), offset, msg },
            other => CliError::Usage(other.to_string()),
        }
    }
}
