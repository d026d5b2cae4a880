use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the filter, the ensemble model and the file layer.
///
/// Step indices are 1-based (`n = 1..=N`), matching the observation index.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate innovation covariance{}", at_step(*.step))]
    DegenerateInnovation { step: Option<usize> },

    #[error("degenerate prior covariance in smoother{}", at_step(*.step))]
    DegenerateSmootherPrior { step: Option<usize> },

    #[error("innovation covariance not positive definite{}", at_step(*.step))]
    NotPositiveDefinite { step: Option<usize> },

    #[error("simulation produced a nonpositive IOI for performer {performer} at step {step}")]
    Unstable { step: usize, performer: usize },

    #[error("oracle problem too large: {size} stacked variables (limit {limit})")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_step(step: Option<usize>) -> String {
    match step {
        Some(n) => format!(" at step {n}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a step index to numerical errors that do not carry one yet.
    pub fn at(self, n: usize) -> Self {
        match self {
            Error::DegenerateInnovation { step: None } => Error::DegenerateInnovation { step: Some(n) },
            Error::DegenerateSmootherPrior { step: None } => Error::DegenerateSmootherPrior { step: Some(n) },
            Error::NotPositiveDefinite { step: None } => Error::NotPositiveDefinite { step: Some(n) },
            Error::Dimension(msg) => Error::Dimension(format!("step {n}: {msg}")),
            other => other,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or usage).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateInnovation { .. }
                | Error::DegenerateSmootherPrior { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Unstable { .. }
        )
    }
}
