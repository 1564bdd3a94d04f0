use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),

    #[error("unknown image_id `{0}`")]
    UnknownImage(String),

    #[error("invalid value: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate bounding box {0:?} after clamping")]
    DegenerateBox([i64; 4]),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("not enough eligible flanks: need {needed}, have {available}")]
    TooFewFlanks { needed: usize, available: usize },

    #[error("no eligible queries: every class has a single member")]
    NoEligibleQueries,

    #[error("degenerate embedding collapse: mean inter-class cosine distance is zero")]
    DegenerateCollapse,

    #[error("non-finite loss or gradient at epoch {epoch} (lr {lr}); batch: {}", batch_ids.join(","))]
    NonFiniteLoss {
        epoch: usize,
        lr: f64,
        batch_ids: Vec<String>,
    },

    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("self-pair verdict on `{0}`")]
    SelfPair(String),

    #[error("missing preprocessed inputs for: {}", .0.join(","))]
    MissingInputs(Vec<String>),

    #[error("external stage failed: {0}")]
    ExternalStage(String),

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
