use thiserror::Error;

/// Errors produced by the core engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown group name: {0}")]
    UnknownGroup(String),

    #[error("group closure exceeded {limit} elements; generator constants are wrong")]
    ClosureOverflow { limit: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("candidate references unknown scan id: {0}")]
    UnknownScan(String),

    #[error("no relevant nodules in reference set")]
    NoRelevantNodules,

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
