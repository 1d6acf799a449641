use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("{what} did not converge; last estimates {last:?}")]
    NoConvergence { what: String, last: Vec<f64> },

    #[error("quadrature stalled with estimated error {achieved:e} (requested {requested:e})")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("singular boundary value problem: eigenvalue {eigenvalue} coincides with shift {shift}")]
    Solvability { eigenvalue: f64, shift: f64 },

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    /// True for failures of the numerics, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::Quadrature { .. }
                | Error::Solvability { .. }
                | Error::Bracket(_)
                | Error::StepUnderflow(_)
                | Error::Fit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
