use std::path::PathBuf;

use thiserror::Error;

/// Parse and I/O failures for OVPT containers.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {found:?}, expected \"OVPT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {what}")]
    Truncated { what: String },
    #[error("tensor `{tensor}`: unknown dtype code {code}")]
    UnknownDtype { tensor: String, code: u8 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{tensor}`: {reason}")]
    InvalidTensor { tensor: String, reason: String },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

/// Errors raised by the pruning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer `{layer}`: non-finite value in {what}")]
    NonFinite { layer: String, what: String },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("degenerate curvature at index {index}: inverse diagonal {value:e} is below the floor")]
    DegenerateCurvature { index: usize, value: f64 },
    #[error("matrix is not positive definite (condition estimate {condition:e})")]
    NotPositiveDefinite { condition: f64 },
    #[error("target of {requested} zeros exceeds the {available} prunable weights")]
    TargetTooLarge { requested: usize, available: usize },
    #[error("layer `{layer}`: {reason}")]
    Pattern { layer: String, reason: String },
    #[error("layer `{layer}`: missing gradients")]
    MissingGradients { layer: String },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("problem too large for exhaustive search: d = {dim} > {max}")]
    TooLarge { dim: usize, max: usize },
    #[error("gradient provider failed: {0}")]
    Provider(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
