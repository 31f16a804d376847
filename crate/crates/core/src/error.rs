use thiserror::Error;

pub type Result<T> = std::result::Result<T, CovarError>;

#[derive(Debug, Error)]
pub enum CovarError {
    /// Malformed probability row.
    #[error("row {row}: {reason}")]
    Validation { row: usize, reason: String },

    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The residual-scale assumption `|delta| <= rho * mu` with `rho < 1` does not hold.
    #[error("residual-scale assumption violated: {0}")]
    AssumptionViolation(String),

    /// Cross-entropy diverges because a class carrying target mass has zero probability.
    #[error("cross-entropy is infinite: class {class} has zero probability but positive target mass")]
    InfiniteCrossEntropy { class: usize },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CovarError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CovarError::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, reason: impl Into<String>) -> Self {
        CovarError::Parse {
            location: location.into(),
            reason: reason.into(),
        }
    }
}
