//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("invalid utf-8 after byte-map inversion at byte offset {offset}")]
    InvalidUtf8 { offset: usize },

    #[error("undefined compression rate for empty text")]
    EmptyCompressionRate,

    #[error("no bigrams: {side} text has fewer than 2 characters")]
    NoBigrams { side: &'static str },

    #[error("empty index map")]
    EmptyIndexMap,

    #[error("index map has fewer than 2 tracked entries")]
    IndexMapTooShort,

    #[error("index map entry {value} out of range for original length {len}")]
    IndexOutOfRange { value: usize, len: usize },

    #[error("vocabulary required for subword perturbation")]
    VocabRequired,

    #[error("rho must lie in [0, 1], got {0}")]
    RhoOutOfRange(f64),

    #[error("{kind} carries no rho parameter")]
    UnexpectedRho { kind: &'static str },

    #[error("{kind} requires a rho parameter")]
    MissingRho { kind: &'static str },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("{metric}: {source}")]
    Metric {
        metric: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("series too short: need at least 3 points, got {0}")]
    SeriesTooShort(usize),

    #[error("degenerate series: zero variance in {0}")]
    DegenerateSeries(String),

    #[error("model {model}: settings missing from the other table: {missing:?}")]
    MissingSettings { model: String, missing: Vec<String> },

    #[error("missing field '{field}' at line {line}")]
    MissingField { field: String, line: usize },

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("output {0} exists (pass --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("line counts differ: {left} vs {right}")]
    LineCountMismatch { left: usize, right: usize },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Attach the metric name to an error bubbling out of a metric routine.
    pub fn for_metric(self, metric: &'static str) -> Self {
        Error::Metric {
            metric,
            source: Box::new(self),
        }
    }
}
