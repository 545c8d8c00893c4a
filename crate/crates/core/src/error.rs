use std::path::PathBuf;

/// Errors produced anywhere in the separation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {0} is not on this tape")]
    ForeignNode(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("malformed wav at byte offset {offset}: {reason}")]
    WavParse { offset: u64, reason: String },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedCodec(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    TrainingAborted { epoch: usize, batch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
