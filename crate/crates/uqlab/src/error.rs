//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the benchmark laboratory.
#[derive(Debug)]
pub enum Error {
    /// An argument violated a precondition (bad distribution parameter,
    /// T < 2, empty input, non-stochastic matrix, ...).
    Parameter(String),
    /// An input left its mathematical domain (negative diameter,
    /// negative variance, out-of-grid point).
    Domain(String),
    /// Tensor/vector dimensions do not line up.
    Shape(String),
    /// A configuration is internally inconsistent (k exceeds available
    /// neighbors, N < bins, missing sections).
    Config(String),
    /// Dataset generation produced no usable samples.
    Generation(String),
    /// Training diverged; reports the step at which the loss became
    /// non-finite.
    Training { step: usize, detail: String },
    /// A metric is undefined for the given inputs (constant reference,
    /// zero reference mean).
    UndefinedMetric(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    Csv(csv::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Generation(msg) => write!(f, "generation error: {msg}"),
            Error::Training { step, detail } => {
                write!(f, "training diverged at step {step}: {detail}")
            }
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
            Error::Csv(e) => write!(f, "csv error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
