use thiserror::Error;

/// Errors raised by problem construction, integration, adjoint sweeps and analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("BDF order {0} outside the supported range [1, 6]")]
    InvalidOrder(usize),

    #[error("nodes must be strictly increasing (violated at position {0})")]
    NodesNotIncreasing(usize),

    #[error("Newton iteration failed at step {step}: {reason}")]
    NewtonFailure { step: usize, reason: String },

    #[error("singular iteration matrix at step {step}")]
    SingularMatrix { step: usize },

    #[error("stepsize underflow at t = {t}: h = {h}")]
    StepsizeUnderflow { t: f64, h: f64 },

    #[error("step limit {limit} reached at t = {t}")]
    StepLimit { limit: usize, t: f64 },

    #[error("time {t} outside [{t_start}, {t_final}]")]
    OutOfRange { t: f64, t_start: f64, t_final: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed tape: {0}")]
    MalformedTape(String),

    #[error("grid is not equidistant: {0}")]
    NonEquidistantGrid(String),

    #[error("serialization failure: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
