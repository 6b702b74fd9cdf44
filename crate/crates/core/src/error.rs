use std::path::PathBuf;

/// Errors produced by the preprocessing library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {row}: cannot parse timestamp {value:?}")]
    BadTimestamp { row: usize, value: String },
    #[error("line {row}, column {column:?}: cannot parse value {value:?}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("line {row}: duplicate timestamp")]
    DuplicateTimestamp { row: usize },
    #[error("line {row}: timestamps are not increasing")]
    NonMonotoneTimestamps { row: usize },
    #[error("mixed sampling periods: base period {base} but found step {other}")]
    MixedPeriods { base: String, other: String },
    #[error("invalid seasonality: {0}")]
    InvalidSeasonality(String),
    #[error("series {column:?} has no observed values")]
    AllMissing { column: String },
    #[error("series {column:?} contains missing values; impute before detecting outliers")]
    MissingValuesPresent { column: String },
    #[error("unknown series {0:?}")]
    UnknownColumn(String),
    #[error("series too short: need at least {needed} observations, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("no usable training rows for lag set {lags:?}; use a smaller lag set")]
    NoTrainingRows { lags: Vec<i64> },
    #[error("quantile level {tau} was not modelled; available levels: {available:?}")]
    UnmodelledQuantile { tau: f64, available: Vec<f64> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
