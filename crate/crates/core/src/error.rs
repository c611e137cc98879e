use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("precision factor B[{unit}] is numerically singular (|det| = {det:e})")]
    SingularFactor { unit: usize, det: f64 },

    #[error("trace of B[{unit}] is too close to zero ({trace:e})")]
    ZeroTrace { unit: usize, trace: f64 },

    #[error("hidden enumeration cap exceeded: 2^{hidden} configurations requested, cap is 2^{cap}")]
    EnumerationCap { hidden: usize, cap: usize },

    #[error("empty {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {group}")]
    Divergence {
        epoch: usize,
        batch: usize,
        group: String,
    },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: file is truncated or corrupt")]
    Checksum,

    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
