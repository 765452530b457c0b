use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("division domain: divisor element {value} within guard {guard}")]
    DivisionDomain { value: f64, guard: f64 },
    #[error("reduction axis set is empty")]
    EmptyAxes,
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("loss must have exactly one element, got {0}")]
    NonScalarLoss(usize),
    #[error("graph already consumed by a backward pass; call reset() first")]
    AlreadyConsumed,
    #[error("function returned different values for identical input ({first} vs {second})")]
    NonDeterministicFunction { first: f64, second: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient encountered during attack")]
    NonFiniteGradient,
    #[error("conditional normalization requires a condition index")]
    MissingConditionIndex,
    #[error("architecture parameters contain a non-finite value")]
    NonFiniteAlpha,
    #[error("normalization variant already attached")]
    AlreadyAttached,
    #[error("normalization variant not attached")]
    NotAttached,
    #[error("vector {0} has zero norm")]
    ZeroNormVector(usize),
    #[error("need at least {needed} vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("degenerate mixture spec: {0}")]
    DegenerateSpec(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("no metrics found in {0}")]
    MissingMetrics(String),
    #[error("corrupt record at {location}: {reason}")]
    CorruptRecord { location: String, reason: String },
    #[error("invalid tensor file: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for failures caused by NaN/Inf values during a run.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NonFiniteGradient | Error::NonFiniteAlpha
        )
    }
}
