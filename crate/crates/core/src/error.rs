use thiserror::Error;

/// Errors shared by the numeric, loss, prior, and experiment modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("{op}: dimension mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: {name} must be positive, got {value}")]
    NonPositive {
        op: &'static str,
        name: &'static str,
        value: f64,
    },

    #[error("{op}: {name} contains a non-finite value")]
    NonFinite { op: &'static str, name: &'static str },

    #[error("{op}: {name} = {value} outside [{lo}, {hi})")]
    OutOfRange {
        op: &'static str,
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("configuration error: {message}")]
    Config { message: String },

    #[error("correlation undefined: {reason}")]
    UndefinedCorrelation { reason: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("linear solve failed: {reason}")]
    SingularSystem { reason: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
