use std::path::PathBuf;

/// Errors surfaced by dataset handling, model construction, learning and
/// evaluation. Validation findings on an SPN are *not* errors (see
/// [`crate::spn::ValidationReport`]); these are faults that stop an operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variable index {index} out of range for {n_vars} variables")]
    ScopeOutOfRange { index: usize, n_vars: usize },

    #[error("invalid model structure: {0}")]
    Structure(String),

    /// Row clustering produced an empty cluster. The structure learner
    /// catches this and falls back to a factorized split.
    #[error("degenerate split: clustering produced an empty cluster")]
    DegenerateSplit,

    #[error("config error: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
