use thiserror::Error;

/// Errors raised by panel handling, forecasting and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate observation for unit {unit} at time {time}")]
    DuplicateObservation { unit: String, time: i64 },

    #[error("non-numeric value {value:?} in column {column} (line {line})")]
    NonNumeric {
        column: String,
        value: String,
        line: u64,
    },

    #[error("unit {0} has neither a treatment date nor a control flag")]
    MissingTreatment(String),

    #[error("unit {0} has no treatment date")]
    MissingTau(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("unit {unit}: {reason}")]
    Window { unit: String, reason: String },

    #[error("no usable units")]
    NoUsableUnits,

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("panel is not balanced: {0}")]
    Unbalanced(String),

    #[error("first stage failed: {0}")]
    FirstStage(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
