use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("gradient tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("decode error: {0}")]
    Decode(String),

    #[error("{path}:{line}: column {column}: {message}")]
    Csv {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("training diverged at epoch {epoch} step {step}: loss is {loss}; try lowering the learning rate (current {lr})")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f32,
        lr: f32,
    },

    #[error("accumulator overflow possible in layer {0}")]
    AccumulatorOverflow(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
