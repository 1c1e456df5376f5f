use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error(
        "insufficient neutral pool for `{related_id}`: need {needed}, {available} eligible (short by {})",
        needed - available
    )]
    InsufficientPool {
        related_id: String,
        needed: usize,
        available: usize,
    },

    #[error("span [{start},{end}) is invalid for text of {len} chars: {reason}")]
    Span {
        start: usize,
        end: usize,
        len: usize,
        reason: &'static str,
    },

    #[error("no embedding stored under key `{0}`")]
    Lookup(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("target `{0}` is not among the candidates")]
    MissingTarget(String),

    #[error("no neutral pool for related entity `{0}`")]
    MissingPool(String),

    #[error("degenerate classes: {0}")]
    DegenerateClass(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("sweep failed: every candidate diverged or failed ({0} candidates)")]
    SweepFailure(usize),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("generator failed for document `{doc_id}`: {reason}")]
    Generator { doc_id: String, reason: String },

    #[error("missing tasks: {}", .0.join(", "))]
    MissingTasks(Vec<String>),

    #[error("query sets differ: {0}")]
    QueryMismatch(String),

    #[error("missing dependency {}: {hint}", path.display())]
    Dependency { path: PathBuf, hint: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the command-line front-end.
    ///
    /// 0 is success; 1 validation failure; 2 missing stage dependency; 3 transport failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dependency { .. } => 2,
            Error::Transport(_) => 3,
            _ => 1,
        }
    }
}
