use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the failure classes the command-line surface
/// distinguishes: contract/dimension/index violations are caller bugs or bad
/// configuration, data errors come from inputs on disk, numeric failures abort
/// training runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error in {path}: {msg}")]
    File { path: PathBuf, msg: String },

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad or inconsistent input data.
    pub fn is_data(&self) -> bool {
        matches!(self, Error::Data(_) | Error::File { .. } | Error::Io { .. })
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
