//! Uniform grids on the unit square and their extended computational domains.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `n x n` mesh on `[0,1]^2` embedded in the extended square `[1-a, a]^2`.
///
/// Arrays on either grid are row-major with the x index fastest and the
/// y index increasing upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    n: usize,
    extension: f64,
    extended_n: usize,
    offset: usize,
}

impl Grid2D {
    pub fn new(n: usize, extension: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("grid needs at least 2 points per side, got {n}")));
        }
        if !(extension >= 1.0 && extension.is_finite()) {
            return Err(Error::InvalidInput(format!("extension factor must be >= 1, got {extension}")));
        }
        let extended_n = (((2.0 * extension - 1.0) * n as f64).round() as usize).max(n);
        Ok(Self {
            n,
            extension,
            extended_n,
            offset: (extended_n - n) / 2,
        })
    }

    /// Grid with no extension (`a = 1`).
    pub fn unextended(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    /// Points per side of the original domain.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn extension(&self) -> f64 {
        self.extension
    }

    pub fn extended_n(&self) -> usize {
        self.extended_n
    }

    /// Offset of the original block inside the extended grid, per axis.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Unknowns on the extended domain.
    pub fn extended_len(&self) -> usize {
        self.extended_n * self.extended_n
    }

    pub fn original_len(&self) -> usize {
        self.n * self.n
    }

    /// Extended-grid index of original pixel `(ix, iy)`.
    pub fn extended_index(&self, ix: usize, iy: usize) -> usize {
        (iy + self.offset) * self.extended_n + ix + self.offset
    }

    /// Extended-grid indices of all original pixels, in original row-major order.
    pub fn original_indices(&self) -> Vec<usize> {
        (0..self.n)
            .flat_map(|iy| (0..self.n).map(move |ix| (iy, ix)))
            .map(|(iy, ix)| self.extended_index(ix, iy))
            .collect()
    }

    /// Restriction from the extended to the original domain.
    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.extended_len());
        self.original_indices().into_iter().map(|k| x[k]).collect()
    }

    /// Zero extension from the original to the extended domain (adjoint of [`Grid2D::restrict`]).
    pub fn extend_zero(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.original_len());
        let mut out = vec![0.0; self.extended_len()];
        for (k, v) in self.original_indices().into_iter().zip(x) {
            out[k] = *v;
        }
        out
    }

    /// Original-domain pixel nearest to extended pixel `(ex, ey)`.
    pub fn nearest_original(&self, ex: usize, ey: usize) -> (usize, usize) {
        let clamp = |e: usize| e.saturating_sub(self.offset).min(self.n - 1);
        (clamp(ex), clamp(ey))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_extension_doubles_the_side() {
        let g = Grid2D::new(50, 1.5).unwrap();
        assert_eq!(g.extended_n(), 100);
        assert_eq!(g.offset(), 25);
        assert_eq!(g.extended_len(), 10_000);
        let idx = g.original_indices();
        assert_eq!(idx[0], 25 * 100 + 25);
        assert_eq!(*idx.last().unwrap(), 74 * 100 + 74);
    }

    #[test]
    fn restrict_is_adjoint_of_extension() {
        let g = Grid2D::new(5, 1.6).unwrap();
        let x: Vec<f64> = (0..g.extended_len()).map(|i| (i as f64).cos()).collect();
        let y: Vec<f64> = (0..g.original_len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let lhs: f64 = g.restrict(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(g.extend_zero(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rejects_shrinking() {
        assert!(Grid2D::new(10, 0.9).is_err());
        assert!(Grid2D::new(1, 1.5).is_err());
    }
}
