//! Linear forward models: periodic blur on the extended grid, restriction
//! to the original domain and selection of observed pixels.

use crate::error::{Error, Result};
use crate::fft::{circulant_symbol, Fft2};
use crate::field::Field;
use crate::grid::Grid2D;
use crate::operator::LinearOperator;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlurKernel {
    #[default]
    None,
    /// Normalized Gaussian with standard deviation `std` pixels on a
    /// `size x size` support (`size` odd).
    Gaussian { std: f64, size: usize },
}

impl BlurKernel {
    /// Gaussian, std 1.5 pixels, 9x9 support.
    pub fn standard() -> Self {
        BlurKernel::Gaussian { std: 1.5, size: 9 }
    }

    /// Row-major weights with the centre at `(size/2, size/2)`.
    pub fn weights(&self) -> Option<(usize, Vec<f64>)> {
        match *self {
            BlurKernel::None => None,
            BlurKernel::Gaussian { std, size } => {
                let half = (size / 2) as i64;
                let mut w: Vec<f64> = (-half..=half)
                    .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
                    .map(|(dx, dy)| (-((dx * dx + dy * dy) as f64) / (2.0 * std * std)).exp())
                    .collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                Some((2 * half as usize + 1, w))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BlurKernel::None => Ok(()),
            BlurKernel::Gaussian { std, size } if std > 0.0 && size % 2 == 1 => Ok(()),
            k => Err(Error::InvalidInput(format!("invalid blur kernel {k:?}"))),
        }
    }
}

/// `A = S R B`: blur `B` on the extended grid, restriction `R`, observed-pixel
/// selection `S`.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    grid: Grid2D,
    mask: Vec<bool>,
    observed: Vec<usize>,
    blur: BlurKernel,
    fft: Fft2,
    blur_symbol: Option<Vec<f64>>,
}

impl ForwardModel {
    /// `mask` is on the original `n x n` grid (`true` = observed).
    pub fn new(grid: Grid2D, mask: Vec<bool>, blur: BlurKernel) -> Result<Self> {
        if mask.len() != grid.original_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.original_len(),
                got: mask.len(),
            });
        }
        blur.validate()?;
        let observed: Vec<usize> = grid
            .original_indices()
            .into_iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(k, _)| k)
            .collect();
        if observed.is_empty() {
            return Err(Error::InvalidInput("forward model observes no pixels".into()));
        }
        let m = grid.extended_n();
        let fft = Fft2::new(m, m);
        let blur_symbol = blur.weights().map(|(size, w)| {
            let half = (size / 2) as i64;
            let mut imp = vec![0.0; m * m];
            for (k, v) in w.iter().enumerate() {
                let dx = (k % size) as i64 - half;
                let dy = (k / size) as i64 - half;
                let ix = dx.rem_euclid(m as i64) as usize;
                let iy = dy.rem_euclid(m as i64) as usize;
                imp[iy * m + ix] += v;
            }
            circulant_symbol(&fft, &imp)
        });
        Ok(Self {
            grid,
            mask,
            observed,
            blur,
            fft,
            blur_symbol,
        })
    }

    /// Model observing every pixel of the original domain.
    pub fn full(grid: Grid2D, blur: BlurKernel) -> Result<Self> {
        Self::new(grid, vec![true; grid.original_len()], blur)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn blur(&self) -> BlurKernel {
        self.blur
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Eigenvalues of the circulant blur, if any.
    pub fn blur_symbol(&self) -> Option<&[f64]> {
        self.blur_symbol.as_deref()
    }

    /// Number of data values `m`.
    pub fn data_len(&self) -> usize {
        self.observed.len()
    }

    /// Number of unknowns on the extended grid.
    pub fn dim(&self) -> usize {
        self.grid.extended_len()
    }

    /// Observed values of a field on the original grid, in model order.
    pub fn data_from_field(&self, field: &Field) -> Result<Vec<f64>> {
        let n = self.grid.n();
        if field.nx() != n || field.ny() != n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: field.len(),
            });
        }
        Ok(field
            .values()
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect())
    }

    pub fn blur_extended(&self, x: &[f64]) -> Vec<f64> {
        match &self.blur_symbol {
            Some(s) => self.fft.apply_symbol(s, x),
            None => x.to_vec(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let bx = self.blur_extended(x);
        self.observed.iter().map(|&k| bx[k]).collect()
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.data_len());
        let mut z = vec![0.0; self.dim()];
        for (&k, v) in self.observed.iter().zip(y) {
            z[k] = *v;
        }
        // symmetric kernels give a self-adjoint blur
        self.blur_extended(&z)
    }

    /// `A^T A x`.
    pub fn normal(&self, x: &[f64]) -> Vec<f64> {
        self.adjoint(&self.apply(x))
    }

    /// `m / N`, the average diagonal of `S^T S` on the extended grid.
    pub fn observed_fraction(&self) -> f64 {
        self.data_len() as f64 / self.dim() as f64
    }
}

/// `A^T A` as a linear operator.
pub struct NormalGram<'a>(pub &'a ForwardModel);

impl LinearOperator for NormalGram<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.0.normal(x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn adjoint_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid2D::new(10, 1.5).unwrap();
        let mask: Vec<bool> = (0..100).map(|i| i % 3 != 0).collect();
        for blur in [BlurKernel::None, BlurKernel::standard()] {
            let a = ForwardModel::new(grid, mask.clone(), blur).unwrap();
            for _ in 0..5 {
                let x = randn(a.dim(), &mut rng);
                let y = randn(a.data_len(), &mut rng);
                let lhs: f64 = a.apply(&x).iter().zip(&y).map(|(u, v)| u * v).sum();
                let rhs: f64 = x.iter().zip(a.adjoint(&y)).map(|(u, v)| u * v).sum();
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gaussian_kernel_is_normalized_and_preserves_constants() {
        let (size, w) = BlurKernel::standard().weights().unwrap();
        assert_eq!(size, 9);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let a = ForwardModel::full(Grid2D::new(8, 1.5).unwrap(), BlurKernel::standard()).unwrap();
        for v in a.apply(&vec![2.0; a.dim()]) {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_model_selects_observed() {
        let grid = Grid2D::unextended(3).unwrap();
        let mask = vec![true, false, true, true, true, false, true, true, true];
        let a = ForwardModel::new(grid, mask, BlurKernel::None).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(a.apply(&x), vec![0.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0]);
        assert_eq!(a.data_len(), 7);
        assert!(ForwardModel::new(grid, vec![false; 9], BlurKernel::None).is_err());
    }
}
