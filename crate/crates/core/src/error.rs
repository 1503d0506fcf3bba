use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout error: {0}")]
    Layout(String),

    #[error("non-finite value while evaluating example {example}: {what}")]
    NonFiniteActivation { example: usize, what: &'static str },

    #[error("non-finite {metric} at alpha = {alpha}")]
    NonFiniteMetric { metric: &'static str, alpha: f64 },

    #[error("metric `{0}` is not supported for this loss kind")]
    UnsupportedMetric(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: need {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("bad magic bytes in {0}")]
    BadMagic(&'static str),

    #[error("partial run detected in {0}; pass --resume or --overwrite")]
    PartialRun(PathBuf),

    #[error("existing completed run in {0}; pass --overwrite to replace it")]
    ExistingRun(PathBuf),

    #[error("empty output: {0}")]
    EmptyOutput(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
