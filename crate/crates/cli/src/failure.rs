use std::path::Path;

use orthopair::Error;

/// Command failure, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Data(String),
}

impl Failure {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Failure::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Config(_)) => 1,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Io { .. } | Failure::Core(_) | Failure::Data(_) => 2,
        }
    }
}
