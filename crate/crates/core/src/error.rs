use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("OHLC invariant violated at line {line}")]
    OhlcInvariant { line: usize },

    #[error("non-positive price at line {line}")]
    NonPositivePrice { line: usize },

    #[error("duplicate or non-monotonic date at line {line}")]
    NonMonotonicDate { line: usize },

    #[error("series too short: need at least {needed} bars, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("insufficient history: bar {t} needs {needed} preceding bars")]
    InsufficientHistory { t: usize, needed: usize },

    #[error("empty date range {from} .. {to}")]
    EmptyDateRange { from: String, to: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("qubit {qubit} out of range for a {n}-qubit register")]
    QubitOutOfRange { qubit: usize, n: usize },

    #[error("control and target must differ (both {0})")]
    SameQubit(usize),

    #[error("parameter-shift rule does not apply to gate {0}")]
    UnsupportedShift(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::MalformedRow { .. }
            | Error::OhlcInvariant { .. }
            | Error::NonPositivePrice { .. }
            | Error::NonMonotonicDate { .. }
            | Error::SeriesTooShort { .. }
            | Error::InsufficientHistory { .. }
            | Error::EmptyDateRange { .. }
            | Error::Csv(_) => ErrorKind::Data,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_) => ErrorKind::Config,
            Error::NonFinite(_) | Error::UndefinedMetric { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Other,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected,
            got,
        })
    }
}
