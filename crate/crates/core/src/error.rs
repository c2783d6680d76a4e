use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("label {0} out of range 0..7")]
    LabelOutOfRange(usize),

    #[error("csv row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("image format error at byte {offset}: {msg}")]
    ImageFormat { offset: usize, msg: String },

    #[error("model file: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("model file: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file truncated at byte {offset}: {context}")]
    Truncated { offset: usize, context: &'static str },

    #[error("model file: dimensions {dims:?} overflow")]
    DimOverflow { dims: Vec<u32> },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("tree file line {line}: {msg}")]
    TreeFormat { line: usize, msg: String },

    #[error("cascade: {0}")]
    Cascade(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, formats) rather
    /// than by a computation going wrong.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::NonFiniteLoss { .. } | Error::ShapeMismatch { .. }
        )
    }
}
