use thiserror::Error;

/// Errors produced by the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("ordering error in series `{series_id}` at row {row}: {message}")]
    Ordering {
        series_id: String,
        row: usize,
        message: String,
    },

    #[error("series `{series_id}` has {length} observations but at least {required} are required")]
    InsufficientLength {
        series_id: String,
        length: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("scale undefined: in-sample seasonal-naive error is zero")]
    UndefinedScale,

    #[error("missing values: {0}")]
    MissingValues(String),

    #[error("model is not fitted")]
    NotFitted,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("deadline exceeded")]
    DeadlineExceeded,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("injected fault: {0}")]
    InjectedFault(String),

    #[error("every trial failed")]
    AllTrialsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
