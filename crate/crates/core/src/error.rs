use std::path::PathBuf;

/// Errors raised by the simulator and the receivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pulse tap at t = {t} is not finite (rolloff {rolloff})")]
    SingularPulse { t: f64, rolloff: f64 },

    #[error("symbol index {index} falls outside the window of {samples} samples")]
    OutOfWindow { index: i64, samples: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("pool of {requested} preambles exceeds the {available} usable roots for length {length}")]
    PoolTooLarge {
        requested: usize,
        available: usize,
        length: usize,
    },

    #[error("noise covariance factorization failed (condition estimate {condition:.3e})")]
    Factorization { condition: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
