use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("frame stack: {0}")]
    FrameStack(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero-norm row {0} has no direction")]
    ZeroNorm(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("problem too large: {0}")]
    TooLarge(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::FrameStack(_) => "frame_stack",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::ZeroNorm(_) => "zero_norm",
            Error::Numerical(_) => "numerical",
            Error::TooLarge(_) => "too_large",
        }
    }

    /// True for failures caused by the caller's input rather than by the computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::Parse { .. }
                | Error::FrameStack(_)
                | Error::InvalidArgument(_)
        )
    }
}
