use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("softmax mask excludes every position")]
    InvalidMask,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("sequence must contain at least one step")]
    EmptySequence,

    #[error("sequence length {length} exceeds {rows} available rows")]
    LengthExceedsRows { length: usize, rows: usize },

    #[error("token id {id} out of vocabulary range (size {vocab})")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("sample {sample}: {modality} features have dimension {found}, expected {expected}")]
    FeatureDim {
        sample: String,
        modality: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("sample {sample}: unknown label {label:?}")]
    UnknownLabel { sample: String, label: String },

    #[error("cannot split {ids} ids into {folds} folds")]
    TooFewIds { ids: usize, folds: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at fold {fold}, run {run}, epoch {epoch}")]
    NonFiniteLoss {
        fold: usize,
        run: usize,
        epoch: usize,
    },

    #[error("{0} requires a non-empty input")]
    EmptyInput(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
