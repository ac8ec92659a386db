use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signature: {0}")]
    Signature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid system spec: {0}")]
    InvalidSpec(String),

    #[error("invalid system instance: {0}")]
    InvalidInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node budget exceeded: need more than {budget} nodes")]
    BudgetExceeded { budget: u64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("rejection sampling gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: usize },

    #[error("insufficient trials: got {got}, need at least {min}")]
    InsufficientTrials { got: usize, min: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than by limits or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Signature(_)
                | Error::Dimension { .. }
                | Error::InvalidSpec(_)
                | Error::InvalidInstance(_)
                | Error::InvalidArgument(_)
                | Error::Hypothesis(_)
                | Error::InsufficientTrials { .. }
        )
    }
}
