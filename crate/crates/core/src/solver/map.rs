//! MAP estimation: `(A^T A + alpha P) x = A^T b` by preconditioned CG.

use super::cg::{pcg, CgOptions, IdentityPreconditioner, JacobiPreconditioner, Preconditioner};
use super::forward::ForwardModel;
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::operator::{LinearOperator, PrecisionOperator};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerKind {
    /// Spectral when the prior is circulant, Jacobi otherwise.
    #[default]
    Auto,
    None,
    Jacobi,
    Spectral,
    /// Spectral inverse of `alpha P` alone.
    Prior,
    /// Per-region spectral inverses glued by the region masks.
    RegionSpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SolverOptions {
    pub cg: CgOptions,
    pub preconditioner: PreconditionerKind,
}

/// `A^T A + alpha P`.
pub struct NormalOperator<'a> {
    pub model: &'a ForwardModel,
    pub prior: &'a dyn PrecisionOperator,
    pub alpha: f64,
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.prior.apply(x, y);
        let g = self.model.normal(x);
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi = self.alpha * *yi + gi;
        }
    }
}

/// Spectral inverse of `mbar |B|^2 + alpha P_hat`.
struct SpectralPreconditioner<'a> {
    fft: &'a Fft2,
    inv: Vec<f64>,
}

impl Preconditioner for SpectralPreconditioner<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.fft.apply_symbol(&self.inv, r));
    }
}

struct RegionSpectralPreconditioner<'a> {
    fft: &'a Fft2,
    labels: &'a [usize],
    inv: Vec<Vec<f64>>,
}

impl Preconditioner for RegionSpectralPreconditioner<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        let mut part = vec![0.0; r.len()];
        for (i, inv) in self.inv.iter().enumerate() {
            for (j, p) in part.iter_mut().enumerate() {
                *p = if self.labels[j] == i { r[j] } else { 0.0 };
            }
            let s = self.fft.apply_symbol(inv, &part);
            for j in 0..r.len() {
                if self.labels[j] == i {
                    z[j] += s[j];
                }
            }
        }
    }
}

fn shifted_inverse(model: &ForwardModel, symbol: &[f64], alpha: f64, mbar: f64) -> Vec<f64> {
    match model.blur_symbol() {
        Some(b) => symbol.iter().zip(b).map(|(p, bb)| 1.0 / (mbar * bb * bb + alpha * p)).collect(),
        None => symbol.iter().map(|p| 1.0 / (mbar + alpha * p)).collect(),
    }
}

fn build_preconditioner<'a>(
    kind: PreconditionerKind,
    model: &'a ForwardModel,
    prior: &'a dyn PrecisionOperator,
    alpha: f64,
) -> Result<Box<dyn Preconditioner + 'a>> {
    let kind = match kind {
        PreconditionerKind::Auto if prior.circulant_symbol().is_some() => PreconditionerKind::Spectral,
        PreconditionerKind::Auto => PreconditionerKind::Jacobi,
        k => k,
    };
    Ok(match kind {
        PreconditionerKind::None => Box::new(IdentityPreconditioner),
        PreconditionerKind::Jacobi => {
            let mut d = prior.diagonal();
            let mbar = model.observed_fraction();
            d.iter_mut().for_each(|v| *v = alpha * *v + mbar);
            Box::new(JacobiPreconditioner::new(&d))
        }
        PreconditionerKind::Spectral => {
            let sym = prior
                .circulant_symbol()
                .ok_or_else(|| Error::InvalidInput("spectral preconditioner needs a circulant prior".into()))?;
            Box::new(SpectralPreconditioner {
                fft: model.fft(),
                inv: shifted_inverse(model, sym, alpha, model.observed_fraction()),
            })
        }
        PreconditionerKind::Prior => {
            let sym = prior
                .circulant_symbol()
                .ok_or_else(|| Error::InvalidInput("prior preconditioner needs a circulant prior".into()))?;
            Box::new(SpectralPreconditioner {
                fft: model.fft(),
                inv: shifted_inverse(model, sym, alpha, 0.0),
            })
        }
        PreconditionerKind::RegionSpectral => {
            let (labels, symbols) = prior.block_symbols().ok_or_else(|| {
                Error::InvalidInput("region-spectral preconditioner needs periodic regional blocks".into())
            })?;
            Box::new(RegionSpectralPreconditioner {
                fft: model.fft(),
                labels,
                inv: symbols.iter().map(|s| shifted_inverse(model, s, alpha, model.observed_fraction())).collect(),
            })
        }
        PreconditionerKind::Auto => unreachable!(),
    })
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    /// Solution on the extended grid.
    pub extended: Vec<f64>,
    /// Solution restricted to the original domain.
    pub estimate: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `(A^T A + alpha P) x = A^T b`; `rhs` may be any right-hand side on
/// the extended grid.
pub fn solve_normal_equations(
    model: &ForwardModel,
    prior: &dyn PrecisionOperator,
    rhs: &[f64],
    alpha: f64,
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, usize, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if prior.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: prior.dim(),
        });
    }
    let op = NormalOperator { model, prior, alpha };
    let pre = build_preconditioner(opts.preconditioner, model, prior, alpha)?;
    let s = pcg(&op, rhs, x0, pre.as_ref(), &opts.cg)?;
    Ok((s.x, s.iterations, s.relative_residual))
}

pub fn map_estimate(
    model: &ForwardModel,
    prior: &dyn PrecisionOperator,
    b: &[f64],
    alpha: f64,
    opts: &SolverOptions,
) -> Result<MapSolution> {
    map_estimate_from(model, prior, b, alpha, opts, None)
}

/// [`map_estimate`] with a warm start.
pub fn map_estimate_from(
    model: &ForwardModel,
    prior: &dyn PrecisionOperator,
    b: &[f64],
    alpha: f64,
    opts: &SolverOptions,
    x0: Option<&[f64]>,
) -> Result<MapSolution> {
    if b.len() != model.data_len() {
        return Err(Error::DimensionMismatch {
            expected: model.data_len(),
            got: b.len(),
        });
    }
    let rhs = model.adjoint(b);
    let (x, iterations, relative_residual) = solve_normal_equations(model, prior, &rhs, alpha, opts, x0)?;
    Ok(MapSolution {
        estimate: model.grid().restrict(&x),
        extended: x,
        iterations,
        relative_residual,
    })
}
