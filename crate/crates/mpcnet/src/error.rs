use std::io;
use std::path::PathBuf;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input from the caller: flags, configuration, missing or malformed files.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::Usage(e.to_string())
    }
}

/// Errors reading or writing the binary policy and buffer files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed header: {source}")]
    Header { path: PathBuf, source: serde_json::Error },
    #[error("{path}: expected a {expected} file, found `{found}`")]
    WrongKind {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: unsupported format version {found} (this build reads {supported})")]
    Version { path: PathBuf, found: u32, supported: u32 },
    #[error("{path}: payload has {got} bytes, header promises {expected}")]
    Truncated { path: PathBuf, expected: usize, got: usize },
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
}

impl FormatError {
    pub(crate) fn io(path: &std::path::Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
