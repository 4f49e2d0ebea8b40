use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid token {text:?}: {reason}")]
    InvalidToken { text: String, reason: &'static str },

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("degenerate lattice: no path from (0,0) to ({m},{n}) carries probability mass")]
    DegenerateLattice { m: usize, n: usize },

    #[error("invalid cost grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: io error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: missing column {column:?}")]
    MissingColumn {
        path: PathBuf,
        line: usize,
        column: String,
    },

    #[error("{path}:{line}: invalid UTF-8")]
    Undecodable { path: PathBuf, line: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("lexicon too small for variant {variant:?}: need {needed} candidates, {available} available")]
    LexiconTooSmall {
        variant: String,
        needed: usize,
        available: usize,
    },

    #[error("model format version mismatch: {0}")]
    ModelVersion(String),

    #[error("model file truncated while reading {0}")]
    ModelTruncated(&'static str),

    #[error("model alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("F1 undefined: no positive labels among {0} scores")]
    NoPositives(usize),

    #[error("training diverged at step {step} (epoch {epoch}): non-finite loss {loss}")]
    Divergence { step: usize, epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerics rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLattice { .. } | Error::Divergence { .. } | Error::InvalidGrid(_)
        )
    }
}
