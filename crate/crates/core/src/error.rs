use thiserror::Error;

/// Errors raised by the library.
///
/// Variants are grouped so a front end can map them onto coarse exit
/// categories: configuration, data, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch between {left} ({left_dims}) and {right} ({right_dims})")]
    Dimension {
        left: &'static str,
        left_dims: String,
        right: &'static str,
        right_dims: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParam(_) => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Dimension { .. } | Error::Data(_) | Error::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn dims(
        left: &'static str,
        left_dims: (usize, usize),
        right: &'static str,
        right_dims: (usize, usize),
    ) -> Self {
        Error::Dimension {
            left,
            left_dims: format!("{}x{}", left_dims.0, left_dims.1),
            right,
            right_dims: format!("{}x{}", right_dims.0, right_dims.1),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
