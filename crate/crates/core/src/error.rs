use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box")]
    DegenerateBox,

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),

    #[error("invalid camera tag {0:?} (expected one of IW, IP, IC, OP, OE, OC)")]
    InvalidCameraTag(String),

    #[error("dataset too small to split")]
    DatasetTooSmall,

    #[error("empty split {0:?}")]
    EmptySplit(String),

    #[error("missing label file for image {0:?}")]
    MissingLabel(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("not a checkpoint")]
    NotACheckpoint,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint/config tensor name mismatch: missing {missing:?}, extra {extra:?}")]
    TensorNameMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: usize, iteration: usize },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
