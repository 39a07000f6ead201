use std::path::PathBuf;

use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Binary container violation. `doc` is the document ordinal when the
    /// failure happened inside a document record.
    #[error("format error at byte {offset}{}: {message}", doc.map(|d| format!(" (doc #{d})")).unwrap_or_default())]
    Format {
        offset: u64,
        doc: Option<u64>,
        message: String,
    },

    /// Text/JSONL violation, 1-based line number.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("tensor {tensor}: {message}")]
    Tensor { tensor: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("duplicate doc id {0:?}")]
    DuplicateDoc(String),

    #[error("latent {0} out of range")]
    LatentOutOfRange(u32),

    #[error("latent {0} has no label vector")]
    MissingVector(u32),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the caller's inputs (files, arguments),
    /// as opposed to external services.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Gateway(_))
    }
}
