use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("probability vector is not on the simplex (sum {sum})")]
    NotSimplex { sum: f64 },

    #[error("singular rank-one update (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },

    #[error("oracle refuses instance with {pairs} state-action pairs (cap {cap})")]
    OracleTooLarge { pairs: usize, cap: usize },

    #[error("linear solve failed: {0}")]
    Singular(&'static str),

    #[error("stationary distribution residual {residual:e} exceeds tolerance")]
    NotErgodic { residual: f64 },

    #[error("index {index} out of range ({len})")]
    OutOfRange { index: usize, len: usize },

    #[error("divergence at step {step}, agent {agent}: {reason}")]
    Diverged {
        step: usize,
        agent: usize,
        reason: &'static str,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
