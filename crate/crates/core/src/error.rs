use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PvmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PvmError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("topology error: {0}")]
    Topology(String),

    /// A caller passed data whose shape or range breaks an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Operations were invoked out of their required order.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint section {section}: {msg}")]
    Checkpoint { section: String, msg: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PvmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PvmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(section: &str, msg: impl Into<String>) -> Self {
        PvmError::Checkpoint {
            section: section.to_string(),
            msg: msg.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::PvmError::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
