//! Error types shared across the toolkit.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: timestamp decreases ({prev} -> {cur})")]
    Ordering { line: usize, prev: f64, cur: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("bit range out of bounds: start {start} len {len} payload {payload_bits} bits")]
    RangeBounds {
        start: usize,
        len: usize,
        payload_bits: usize,
    },

    #[error("value {value} does not fit in {len} bits")]
    ValueOverflow { value: u64, len: usize },

    #[error("target ID 0x{0:X} not present in trace")]
    NoTarget(u32),

    #[error("attack span exceeds available frames: {0}")]
    Span(String),

    #[error("no eligible ID for preset: {0}")]
    NoEligibleId(String),

    #[error("ID 0x{0:X} has no physical signals; excluded from modeling")]
    IneligibleId(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {layer} at step {step}")]
    NumericFailure { layer: String, step: usize },

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("signal map digest mismatch for ID 0x{0:X}")]
    DigestMismatch(u32),

    #[error("verdict/label misalignment: {0}")]
    Misalignment(String),

    #[error("model input width k={model_k} does not match window width k={window_k}")]
    KMismatch { model_k: usize, window_k: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
