//! Whittle-Matérn priors for image inverse problems, with hyperparameters
//! estimated from semivariograms.

pub mod bessel;
pub mod cholesky;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod io;
pub mod matern;
pub mod metrics;
pub mod operator;
pub mod optim;
pub mod regional;
pub mod semivariogram;
pub mod solver;
pub mod sparse;
pub mod spde;

pub use error::{Error, Result};
pub use field::Field;
pub use grid::Grid2D;
pub use matern::{AnisotropyEstimate, MaternFit};
pub use sparse::CsrMatrix;
