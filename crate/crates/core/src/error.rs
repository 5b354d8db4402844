use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("output {index} = {value} lies outside the open interval (-1, 1)")]
    OutOfRange { index: usize, value: f64 },

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("hold node mismatch: loss config use_hold = {expected}, output vector has hold node = {actual}")]
    HoldMismatch { expected: bool, actual: bool },

    #[error("finite-difference step {h} at output {index} = {value} would leave (-1, 1)")]
    PerturbationOutOfRange { index: usize, value: f64, h: f64 },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}:{line}: cannot parse `{field}` value {value:?}")]
    Parse {
        path: PathBuf,
        line: u64,
        field: String,
        value: String,
    },

    #[error("duplicate row for date {date}, ticker {ticker}")]
    DuplicateRow { date: NaiveDate, ticker: String },

    #[error("panel gap: no row for date {date}, ticker {ticker}")]
    PanelGap { date: NaiveDate, ticker: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-positive price {price} for stock {stock} on day {day}")]
    NonPositivePrice { day: usize, stock: usize, price: f64 },

    #[error("incompatible shapes: {0}")]
    Compatibility(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("empty sample passed to {0}")]
    EmptySample(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
