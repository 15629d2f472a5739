use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// [`Error::kind`] groups them into the coarse categories the command line
/// maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("expected a scalar output, found shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),

    #[error("{0}: empty dataset")]
    EmptyDataset(&'static str),

    #[error("query pool is exhausted")]
    EmptyPool,

    #[error("committee has no trained members")]
    UntrainedCommittee,

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("training diverged in {stage} at iteration {iteration}: {loss} = {value}")]
    Divergence {
        stage: String,
        iteration: usize,
        loss: &'static str,
        value: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Csv { path: PathBuf, line: u64, msg: String },

    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error categories; see [`Error::kind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Divergence,
    Data,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Divergence { .. } => ErrorKind::Divergence,
            Error::Data(_)
            | Error::Csv { .. }
            | Error::Schema { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::EmptyDataset(_)
            | Error::EmptyPool
            | Error::NotNormalized { .. } => ErrorKind::Data,
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Internal,
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
