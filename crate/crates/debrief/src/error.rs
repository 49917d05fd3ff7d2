use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum DebriefError {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("unknown video {0:?}")]
    UnknownVideo(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("external summarizer: {0}")]
    External(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] panoact::Error),
}

impl DebriefError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DebriefError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DebriefError>;
