use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid convolution spec: {0}")]
    ConvSpec(String),

    #[error("channel count {channels} is not divisible by {divisor} ({context})")]
    Divisibility {
        channels: usize,
        divisor: usize,
        context: &'static str,
    },

    #[error("loss must be a scalar tensor, got shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("stage {stage}: {detail}")]
    Stage { stage: usize, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("need at least {window} records, got {got}")]
    TooFewRecords { window: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
