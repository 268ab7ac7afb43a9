use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The chosen subset has `p(y|Ω) = p(y)` and carries no label information.
    #[error("uninformative subset: p(y|Ω) equals p(y)")]
    UninformativeSubset,

    /// X and Y are independent, so no β makes the data learnable.
    #[error("X is independent of Y")]
    Independent,

    /// A constant (or label-blind) perturbation direction `h`.
    #[error("invalid perturbation direction: {0}")]
    InvalidDirection(String),

    #[error("no probability mass inside the discretization range")]
    NoMassInRange,

    #[error("training data contains fewer than two classes")]
    SingleClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for the errors meaning "nothing is learnable at any β".
    pub fn is_independence(&self) -> bool {
        matches!(self, Error::Independent | Error::UninformativeSubset)
    }
}
