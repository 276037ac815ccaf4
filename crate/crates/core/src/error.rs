use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum QipfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unsupported Hermite order {order} (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("numerical failure at y = {y}, mode {mode}: {detail}")]
    NumericalFailure { y: f64, mode: usize, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("layer `{layer}`: shape implies {expected} values but {actual} were given")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingFailure { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QipfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NumericalFailure { .. } | Self::TrainingFailure { .. }
        )
    }
}

pub type Result<T, E = QipfError> = std::result::Result<T, E>;
