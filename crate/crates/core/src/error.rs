use thiserror::Error;

/// Errors raised by the emulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input data is malformed (non-finite values, negative magnitudes, bad grids).
    #[error("data error: {0}")]
    Data(String),
    /// Array dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),
    /// A parameter lies outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A Cholesky factorization failed even after jitter escalation.
    #[error("factorization of {matrix} failed: {detail}")]
    Factorization { matrix: String, detail: String },
    /// A computed quantity violates a numerical consistency check.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Q² is undefined because the test values have zero variance.
    #[error("test values have zero variance; Q² is undefined (use the pooled-variance variant)")]
    DegenerateVariance,
    /// Hyperparameter fitting failed.
    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. } | Error::Numerical(_) | Error::Fit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
