use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate spatial gradient (|grad f| below threshold)")]
    DegenerateGradient,

    #[error("non-finite value at layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("numeric abort at iteration {iteration}: {message}")]
    NumericAbort { iteration: usize, message: String },

    #[error("no valid model: every snapshot produced an empty mesh")]
    NoValidModel,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Input could not be read or parsed.
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::EmptyInput(_) | Error::Checkpoint(_)
        )
    }

    /// Input was readable but geometrically unusable.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInput(_) | Error::DegenerateMesh(_) | Error::NoValidModel
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLayer { .. } | Error::NumericAbort { .. } | Error::DegenerateGradient
        )
    }
}
