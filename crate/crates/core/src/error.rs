use thiserror::Error;

/// Guidance surfaced whenever the expected risk set empties out inside the
/// assessment interval for every admissible mix.
pub const NARROW_TAU_GUIDANCE: &str = "the expected risk set is empty somewhere in the \
assessment interval for every patient mix; this usually means tau is too large for the \
design and the assessment interval should be narrowed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("undefined comparison: {0}")]
    UndefinedComparison(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("untestable: {0}")]
    Untestable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn infeasible() -> Self {
        Error::Infeasible(NARROW_TAU_GUIDANCE.to_string())
    }
}
