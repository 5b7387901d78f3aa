use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("softmax row {row} has no unmasked position")]
    FullyMaskedRow { row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("cross entropy: every row is ignored")]
    AllRowsIgnored,

    #[error("split requires at least {min} persons, got {got}")]
    TooFewPersons { min: usize, got: usize },

    #[error("step {0} outside the 0..1008 week range")]
    StepOutOfRange(usize),

    #[error("state code {code} out of range for alphabet '{alphabet}' ({size} states)")]
    CodeOutOfRange {
        code: u16,
        alphabet: String,
        size: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("corpus contains no at-home step")]
    NoAtHomeSteps,

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("{path}:{line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint kind mismatch: file contains {found}, expected {expected}")]
    KindMismatch { found: String, expected: String },

    #[error("checksum mismatch in parameter block '{0}'")]
    ChecksumMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
