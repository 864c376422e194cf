use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error in {block} block: expected {expected} entries, found {found}")]
    Schema {
        block: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("session {session_id}, frame {frame_index}: {message}")]
    Invariant {
        session_id: String,
        frame_index: u64,
        message: String,
    },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {0} has no samples")]
    MissingClass(String),

    #[error("training requires at least two distinct classes")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch} (loss = {loss}); try a smaller learning rate")]
    Diverged { epoch: usize, loss: f64 },

    #[error("split error: {0}")]
    Split(String),

    #[error("out-of-order frame: expected index {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },

    #[error("model container: {0}")]
    Container(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category name for reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Schema { .. } | Error::Parse { .. } | Error::Json(_) => "input",
            Error::InvalidValue(_) | Error::Invariant { .. } | Error::OutOfOrder { .. } => {
                "validation"
            }
            Error::Shape { .. } | Error::Dimension { .. } => "dimension",
            Error::Empty(_)
            | Error::MissingClass(_)
            | Error::SingleClass
            | Error::Degenerate(_) => "data",
            Error::NonFinite(_) | Error::Diverged { .. } => "numeric",
            Error::Split(_) => "split",
            Error::Container(_) => "model",
            Error::Config(_) => "config",
            Error::File { .. } | Error::Io(_) => "io",
        }
    }
}

/// Attaches the offending path to I/O errors.
pub trait PathContext<T> {
    fn at(self, path: impl AsRef<std::path::Path>) -> Result<T>;
}

impl<T> PathContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl AsRef<std::path::Path>) -> Result<T> {
        self.map_err(|source| Error::File {
            path: path.as_ref().to_path_buf(),
            source,
        })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
