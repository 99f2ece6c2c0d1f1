use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("point {x:?} is outside the model domain: {reason}")]
    Domain { x: Vec<f64>, reason: String },

    /// The task matrix F(x) could not be inverted reliably at `x`.
    #[error("F(x) is singular or ill-conditioned at {x:?} (condition estimate {condition:e})")]
    SingularF { x: Vec<f64>, condition: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set: {0}")]
    EmptySamples(&'static str),

    #[error("gain alpha = {alpha} is infeasible; it must exceed {min_alpha}")]
    GainInfeasible { alpha: f64, min_alpha: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
