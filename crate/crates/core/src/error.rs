use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate sample: all pairwise distances are zero")]
    DegenerateSample,

    #[error("score is singular at the origin for this model")]
    SingularPoint,

    #[error("stein kernel evaluation failed at index pair ({i}, {j}): {source}")]
    GramEntry {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ill-conditioned system (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("V-statistic is negative ({0:.3e}); the Stein Gram is broken")]
    NegativeVStat(f64),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("no data")]
    EmptyData,

    #[error("bad quadrature grid: {0}")]
    BadGrid(String),

    #[error("bad bootstrap weights: sum is {sum}, expected {n}")]
    BadWeights { sum: i64, n: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("expected exactly two density intersections, found {0}")]
    RootCountError(usize),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("not a probability simplex: {0}")]
    BadSimplex(String),

    #[error("degrees of freedom must exceed 2, got {0}")]
    BadNu(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error at line {line}: {message}")]
    Data { line: u64, message: String },

    #[error("schema error at key `{0}`")]
    Schema(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("experiment failed: {0}")]
    Experiment(String),
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
        Error::InvalidParameter(msg.into())
    }
}
