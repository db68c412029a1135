use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the fitting, estimation and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate date {date} at row {row}")]
    DuplicateDate { date: String, row: usize },

    #[error("fewer than 2 rows")]
    TooFewRows,

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("series is not daily-spaced: {0}")]
    NotDaily(String),

    #[error("not enough data: need {required}, got {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside trend domain [{start}, {end}]")]
    OutsideDomain { t: f64, start: f64, end: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
