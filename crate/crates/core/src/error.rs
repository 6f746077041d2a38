use std::path::PathBuf;

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("index error: id {id} out of range (size {bound}) at position {position}")]
    Index {
        id: usize,
        bound: usize,
        position: String,
    },

    #[error("validity error: {0}")]
    Validity(String),

    #[error("degenerate batch: loss mask is all zero")]
    DegenerateBatch,

    #[error("data contract error: {0}")]
    DataContract(String),

    #[error("format error in {source_name} at byte {offset}: {message}")]
    Format {
        source_name: String,
        offset: u64,
        message: String,
    },

    #[error("lookup error: no feature vector for image id {0:?}")]
    MissingFeature(String),

    #[error("alignment error: story {0:?} has no counterpart")]
    Alignment(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(source_name: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            offset,
            message: message.into(),
        }
    }

    /// Data, format and I/O failures, as opposed to misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::MissingFeature(_)
                | Error::Alignment(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::DataContract(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
