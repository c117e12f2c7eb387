use thiserror::Error;

/// Errors produced by the adaptation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },

    #[error("no prototype present for any class")]
    NoPrototypes,

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("undefined surface: {0} mask has no boundary pixels")]
    UndefinedSurface(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not a checkpoint")]
    NotACheckpoint,

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
