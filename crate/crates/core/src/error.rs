use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core, ingest and serialization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not square or has the wrong length ({0})")]
    NotSquare(String),

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("symmetric eigendecomposition did not converge (n = {0})")]
    NonConvergence(usize),

    #[error("eigendecomposition failed certification: {0}")]
    EigenCertification(String),

    #[error("matrix is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },

    #[error("matrix is still not positive definite after ridge {ridge:e} (smallest eigenvalue {lambda_min:e})")]
    StillNotPd { ridge: f64, lambda_min: f64 },

    #[error("matrix is ill-conditioned: lambda_min / lambda_max = {ratio:e} is below {floor:e}")]
    IllConditioned { ratio: f64, floor: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("negative ridge {0}")]
    NegativeRidge(f64),

    #[error("sample set needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("sample {index} has length {len}, expected {expected}")]
    RaggedSamples { index: usize, len: usize, expected: usize },

    #[error("sample covariance is degenerate: {0}")]
    DegenerateSamples(Box<Error>),

    #[error("covariances differ (max relative gap {gap:e}); enable pooled mode")]
    CovMismatch { gap: f64 },

    #[error("Chernoff exponent s = {0} is outside [0, 1]")]
    SOutOfRange(f64),

    #[error("negative input {0}")]
    NegativeInput(f64),

    #[error("quadrature oracle supports n <= 3, got n = {0}")]
    DimensionTooLarge(usize),

    #[error("vector of length {len} cannot be devectorized to side {side}")]
    LengthMismatch { len: usize, side: usize },

    #[error("inner window {inner} does not fit in side {side}")]
    InvalidWindow { inner: usize, side: usize },

    #[error("complement ring has zero mean")]
    DegenerateRing,

    #[error("clustering needs at least 2 leaves, got {0}")]
    TooFewLeaves(usize),

    #[error("cluster count {k} outside [1, {leaves}]")]
    KOutOfRange { k: usize, leaves: usize },

    #[error("labeling has {labels} leaves but the image has {pixels} pixels")]
    SizeMismatch { labels: usize, pixels: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("class {0} not found in the supplied batches")]
    ClassNotFound(u8),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
