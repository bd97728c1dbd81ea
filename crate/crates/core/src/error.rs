use std::path::PathBuf;

use chrono::NaiveDateTime;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("duplicate timestamp {timestamp} for user {user_id}")]
    DuplicateTimestamp {
        user_id: String,
        timestamp: NaiveDateTime,
    },

    #[error("overlapping DR events for user {user_id} at {start}")]
    OverlappingEvents {
        user_id: String,
        start: NaiveDateTime,
    },

    #[error("no flags for user {0}")]
    MissingFlags(String),

    #[error("series do not overlap")]
    EmptyIntersection,

    #[error("zero variance series")]
    ZeroVariance,

    #[error("series too short: need more than {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("insufficient rows: {training} training rows (min {min_training}), {dr} DR rows (min {min_dr})")]
    InsufficientRows {
        training: usize,
        dr: usize,
        min_training: usize,
        min_dr: usize,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "{solver} did not converge after {iterations} iterations (last change {last_change:.3e})"
    )]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("model {0} cannot predict from a covariate matrix")]
    Unsupported(&'static str),

    #[error("need {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
