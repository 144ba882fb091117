use thiserror::Error;

/// Errors raised by the bound, receiver and oracle computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scene geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),

    /// The two return modes are numerically collinear; only the single-mode
    /// description applies.
    #[error("degenerate geometry: residual overlap coefficient b = {b:e} is below {threshold:e}")]
    DegenerateGeometry { b: f64, threshold: f64 },

    #[error("unphysical state: minimum symplectic eigenvalue {min_symplectic} < 1")]
    Unphysical { min_symplectic: f64 },

    #[error("mode-count mismatch: {0} vs {1}")]
    ModeMismatch(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (residual {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (minimum eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Fock cutoff {cutoff} too small: tail weight {tail:e} exceeds {tol:e}")]
    CutoffTooSmall { cutoff: usize, tail: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by user-supplied inputs rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidGeometry(_)
                | Error::InvalidParams(_)
                | Error::DegenerateGeometry { .. }
                | Error::Domain(_)
                | Error::Config(_)
                | Error::CutoffTooSmall { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
