use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate field: {0}")]
    DegenerateField(String),

    #[error("semivariogram fit failed: {0}")]
    FitFailure(String),

    #[error("no gamma_crit crossing in direction {psi_degrees:.1} deg within max lag {max_lag}")]
    NoCrossing { psi_degrees: f64, max_lag: f64 },

    #[error("operator is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("Cholesky factorization failed for region {region}: {reason}")]
    RegionCholesky { region: usize, reason: String },

    #[error("unsupported sampling configuration: {0}")]
    UnsupportedSampling(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
