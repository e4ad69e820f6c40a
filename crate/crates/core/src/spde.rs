//! SPDE-discretized Whittle-Matérn precision operators, prior sampling and
//! the empirical-correlation check.
//!
//! The base operator on the extended grid is
//! `I + H11/h^2 Lx + H22/h^2 Ly - H12/(2h^2) Kx Ky`, where `H = R^T R` is the
//! length-scale tensor of the anisotropic coordinate transform, `L` is the
//! second-difference stencil and `K` the central first difference. The
//! precision is the `beta`-th power of the base operator.

use crate::cholesky::SparseCholesky;
use crate::error::{Error, Result};
use crate::fft::{circulant_symbol, Fft2};
use crate::grid::Grid2D;
use crate::matern::{correlation_distance, correlation_unchecked, directional_range, AnisotropyEstimate};
use crate::operator::{lanczos_min_ritz, LinearOperator, PrecisionOperator};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

impl Boundary {
    /// Correlation level whose distance sets the extension width.
    pub fn extension_level(self) -> f64 {
        match self {
            Boundary::Dirichlet => 0.30,
            Boundary::Periodic => 0.20,
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(Boundary::Dirichlet),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Parse(format!("unknown boundary condition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorVariant {
    Isotropic { nu: f64, ell: f64 },
    Anisotropic { nu: f64, theta: f64, ell1: f64, ell2: f64 },
}

impl PriorVariant {
    pub fn nu(&self) -> f64 {
        match *self {
            PriorVariant::Isotropic { nu, .. } | PriorVariant::Anisotropic { nu, .. } => nu,
        }
    }

    /// Length-scale geometry as an anisotropy estimate (isotropic gives `tau = 1`).
    pub fn geometry(&self) -> Result<AnisotropyEstimate> {
        match *self {
            PriorVariant::Isotropic { ell, .. } => AnisotropyEstimate::isotropic(ell),
            PriorVariant::Anisotropic { theta, ell1, ell2, .. } => AnisotropyEstimate::new(theta, ell1, ell2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub variant: PriorVariant,
    pub boundary: Boundary,
    pub grid: Grid2D,
}

impl PrecisionSpec {
    pub fn isotropic(nu: f64, ell: f64, boundary: Boundary, grid: Grid2D) -> Result<Self> {
        let spec = Self {
            variant: PriorVariant::Isotropic { nu, ell },
            boundary,
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn anisotropic(
        nu: f64,
        theta: f64,
        ell1: f64,
        ell2: f64,
        boundary: Boundary,
        grid: Grid2D,
    ) -> Result<Self> {
        let spec = Self {
            variant: PriorVariant::Anisotropic { nu, theta, ell1, ell2 },
            boundary,
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let lengths_ok = match self.variant {
            PriorVariant::Isotropic { ell, .. } => ell > 0.0 && ell.is_finite(),
            PriorVariant::Anisotropic { theta, ell1, ell2, .. } => {
                theta.is_finite() && ell1 > 0.0 && ell2 > 0.0 && ell1.is_finite() && ell2.is_finite()
            }
        };
        if !lengths_ok {
            return Err(Error::Domain(format!("invalid length scales in {:?}", self.variant)));
        }
        if !(self.nu() > 0.0) {
            return Err(Error::Domain(format!("smoothness must be positive, got nu = {}", self.nu())));
        }
        self.beta()?;
        if self.boundary == Boundary::Periodic && self.grid.extended_n() < 3 {
            return Err(Error::InvalidInput("periodic grids need at least 3 points per side".into()));
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        self.variant.nu()
    }

    /// `beta = nu + 1` (two dimensions); must be a positive integer.
    pub fn beta(&self) -> Result<u32> {
        let b = self.nu() + 1.0;
        if !(b.is_finite() && b >= 1.0 - 1e-9 && (b - b.round()).abs() < 1e-9) {
            return Err(Error::Domain(format!(
                "beta = nu + 1 must be a positive integer, got nu = {}",
                self.nu()
            )));
        }
        Ok(b.round() as u32)
    }

    fn stencil(&self) -> Stencil {
        let h2 = self.grid.h().powi(2);
        match self.variant {
            PriorVariant::Isotropic { ell, .. } => {
                let c = ell * ell / h2;
                Stencil { cx: c, cy: c, q: 0.0 }
            }
            PriorVariant::Anisotropic { theta, ell1, ell2, .. } => {
                let (s, c) = theta.sin_cos();
                let (l1, l2) = (ell1 * ell1, ell2 * ell2);
                let h11 = l1 * c * c + l2 * s * s;
                let h22 = l1 * s * s + l2 * c * c;
                let h12 = (l1 - l2) * s * c;
                Stencil {
                    cx: h11 / h2,
                    cy: h22 / h2,
                    q: -h12 / (2.0 * h2),
                }
            }
        }
    }
}

/// `I + cx Lx + cy Ly + q Kx Ky`.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    cx: f64,
    cy: f64,
    q: f64,
}

fn assemble_base(spec: &PrecisionSpec) -> CsrMatrix {
    let m = spec.grid.extended_n();
    let st = spec.stencil();
    let periodic = spec.boundary == Boundary::Periodic;
    let taps = [
        (0i64, 0i64, 1.0 + 2.0 * st.cx + 2.0 * st.cy),
        (1, 0, -st.cx),
        (-1, 0, -st.cx),
        (0, 1, -st.cy),
        (0, -1, -st.cy),
        (1, 1, st.q),
        (-1, -1, st.q),
        (1, -1, -st.q),
        (-1, 1, -st.q),
    ];
    let mut trip = Vec::with_capacity(m * m * 9);
    let mi = m as i64;
    for iy in 0..mi {
        for ix in 0..mi {
            let row = (iy * mi + ix) as usize;
            for &(dx, dy, w) in &taps {
                if w == 0.0 {
                    continue;
                }
                let (mut jx, mut jy) = (ix + dx, iy + dy);
                if periodic {
                    jx = jx.rem_euclid(mi);
                    jy = jy.rem_euclid(mi);
                } else if jx < 0 || jy < 0 || jx >= mi || jy >= mi {
                    continue;
                }
                trip.push((row, (jy * mi + jx) as usize, w));
            }
        }
    }
    CsrMatrix::from_triplets(m * m, m * m, trip)
}

/// Assembled precision `P = base^beta` on the extended grid.
#[derive(Debug, Clone)]
pub struct SpdePrecision {
    spec: PrecisionSpec,
    beta: u32,
    base: CsrMatrix,
    matrix: CsrMatrix,
    fft: Option<Fft2>,
    base_symbol: Option<Vec<f64>>,
    symbol: Option<Vec<f64>>,
}

struct CsrOp<'a>(&'a CsrMatrix);

impl LinearOperator for CsrOp<'_> {
    fn dim(&self) -> usize {
        self.0.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.matvec(x, y)
    }
}

impl SpdePrecision {
    pub fn assemble(spec: &PrecisionSpec) -> Result<Self> {
        match spec.variant {
            PriorVariant::Isotropic { .. } => assemble_isotropic_precision(spec),
            PriorVariant::Anisotropic { .. } => assemble_anisotropic_precision(spec),
        }
    }

    fn build(spec: &PrecisionSpec) -> Result<Self> {
        spec.validate()?;
        let beta = spec.beta()?;
        let base = assemble_base(spec);
        let matrix = base.pow(beta)?;
        let (fft, base_symbol, symbol) = if spec.boundary == Boundary::Periodic {
            let m = spec.grid.extended_n();
            let fft = Fft2::new(m, m);
            let mut e0 = vec![0.0; m * m];
            e0[0] = 1.0;
            let bs = circulant_symbol(&fft, &base.mul_vec(&e0));
            let s = bs.iter().map(|v| v.powi(beta as i32)).collect();
            (Some(fft), Some(bs), Some(s))
        } else {
            (None, None, None)
        };
        Ok(Self {
            spec: *spec,
            beta,
            base,
            matrix,
            fft,
            base_symbol,
            symbol,
        })
    }

    /// Smallest-eigenvalue estimate of the base operator: exact for periodic
    /// grids, a 50-step Lanczos Ritz value otherwise.
    pub fn min_eigenvalue_estimate(&self) -> f64 {
        match &self.base_symbol {
            Some(s) => s.iter().cloned().fold(f64::INFINITY, f64::min),
            None => lanczos_min_ritz(&CsrOp(&self.base), 50, 0x5eed),
        }
    }

    pub fn spec(&self) -> &PrecisionSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid2D {
        &self.spec.grid
    }

    pub fn beta(&self) -> u32 {
        self.beta
    }

    pub fn base(&self) -> &CsrMatrix {
        &self.base
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn fft(&self) -> Option<&Fft2> {
        self.fft.as_ref()
    }

    pub fn base_symbol(&self) -> Option<&[f64]> {
        self.base_symbol.as_deref()
    }

    /// Marginal variance of `N(0, P^{-1})`: the mean of the inverse symbol,
    /// taken from the periodic counterpart when the boundary is Dirichlet.
    pub fn marginal_variance(&self) -> Result<f64> {
        match &self.symbol {
            Some(s) => Ok(s.iter().map(|v| 1.0 / v).sum::<f64>() / s.len() as f64),
            None => {
                let spec = PrecisionSpec {
                    boundary: Boundary::Periodic,
                    ..self.spec
                };
                SpdePrecision::build(&spec)?.marginal_variance()
            }
        }
    }

    /// `P x` through the DFT (periodic only).
    pub fn apply_spectral(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.fft.as_ref()?.apply_symbol(self.symbol.as_ref()?, x))
    }
}

impl LinearOperator for SpdePrecision {
    fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }
}

impl PrecisionOperator for SpdePrecision {
    fn circulant_symbol(&self) -> Option<&[f64]> {
        self.symbol.as_deref()
    }

    fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal()
    }
}

/// `P = (I + (ell/h)^2 L_2D)^beta`.
pub fn assemble_isotropic_precision(spec: &PrecisionSpec) -> Result<SpdePrecision> {
    if !matches!(spec.variant, PriorVariant::Isotropic { .. }) {
        return Err(Error::InvalidInput("expected an isotropic prior".into()));
    }
    SpdePrecision::build(spec)
}

/// Anisotropic precision; fails when the base operator is not positive definite.
pub fn assemble_anisotropic_precision(spec: &PrecisionSpec) -> Result<SpdePrecision> {
    if !matches!(spec.variant, PriorVariant::Anisotropic { .. }) {
        return Err(Error::InvalidInput("expected an anisotropic prior".into()));
    }
    let p = SpdePrecision::build(spec)?;
    let lmin = p.min_eigenvalue_estimate();
    if !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "anisotropic base operator has eigenvalue estimate {lmin:e}"
        )));
    }
    Ok(p)
}

/// `a = 1 + r_c` with `c = 0.30` (Dirichlet) or `0.20` (periodic).
pub fn extension_factor(nu: f64, ell: f64, boundary: Boundary) -> Result<f64> {
    Ok(1.0 + correlation_distance(boundary.extension_level(), nu, ell)?)
}

/// Extension used for image problems: never below the standard `a = 1.5`.
pub fn image_extension_factor(nu: f64, ell: f64, boundary: Boundary) -> Result<f64> {
    Ok(extension_factor(nu, ell, boundary)?.max(1.5))
}

enum SamplerKind {
    Spectral { fft: Fft2, multiplier: Vec<f64> },
    Cholesky { chol: SparseCholesky, half_power: u32 },
}

/// Seeded stream of draws from `N(0, P^{-1})` on the extended grid.
pub struct PriorSampler {
    kind: SamplerKind,
    rng: ChaCha8Rng,
    pending: Option<Vec<f64>>,
    len: usize,
}

impl PriorSampler {
    pub fn new(prec: &SpdePrecision, seed: u64) -> Result<Self> {
        let beta = prec.beta();
        let kind = match (&prec.fft, &prec.base_symbol) {
            (Some(fft), Some(bs)) => SamplerKind::Spectral {
                fft: fft.clone(),
                multiplier: bs.iter().map(|s| s.powf(-(beta as f64) / 2.0)).collect(),
            },
            _ => {
                if !beta.is_multiple_of(2) {
                    return Err(Error::UnsupportedSampling(format!(
                        "Dirichlet sampling needs an even beta, got {beta}"
                    )));
                }
                SamplerKind::Cholesky {
                    chol: SparseCholesky::factor(&prec.base)?,
                    half_power: beta / 2,
                }
            }
        };
        Ok(Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
            len: prec.dim(),
        })
    }

    pub fn draw(&mut self) -> Vec<f64> {
        if let Some(x) = self.pending.take() {
            return x;
        }
        let len = self.len;
        match &self.kind {
            SamplerKind::Spectral { fft, multiplier } => {
                // two real draws per complex transform
                let mut buf: Vec<Complex64> = (0..len)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(&mut self.rng);
                        let im: f64 = StandardNormal.sample(&mut self.rng);
                        Complex64::new(re, im)
                    })
                    .collect();
                fft.forward(&mut buf);
                buf.iter_mut().zip(multiplier).for_each(|(b, m)| *b *= *m);
                fft.inverse(&mut buf);
                self.pending = Some(buf.iter().map(|c| c.im).collect());
                buf.iter().map(|c| c.re).collect()
            }
            SamplerKind::Cholesky { chol, half_power } => {
                let mut x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut self.rng)).collect();
                for _ in 0..*half_power {
                    chol.solve_in_place(&mut x);
                }
                x
            }
        }
    }
}

/// `count` prior draws on the extended grid (`delta = 1`).
pub fn sample_prior(spec: &PrecisionSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let prec = SpdePrecision::assemble(spec)?;
    let mut sampler = PriorSampler::new(&prec, seed)?;
    Ok((0..count).map(|_| sampler.draw()).collect())
}

/// Exact Matérn correlation matrix between the original-domain pixels.
pub fn matern_correlation_matrix(spec: &PrecisionSpec) -> Result<DMatrix<f64>> {
    let n = spec.grid.n();
    let h = spec.grid.h();
    let nu = spec.nu();
    let geom = spec.variant.geometry()?;
    let span = 2 * n - 1;
    // correlation depends only on the lag (dx, dy)
    let mut table = vec![0.0; span * span];
    for ly in 0..span {
        for lx in 0..span {
            let dx = (lx as f64 - (n - 1) as f64) * h;
            let dy = (ly as f64 - (n - 1) as f64) * h;
            let r = dx.hypot(dy);
            table[ly * span + lx] = if r == 0.0 {
                1.0
            } else {
                correlation_unchecked(r / directional_range(dy.atan2(dx), &geom), nu)
            };
        }
    }
    let npix = n * n;
    Ok(DMatrix::from_fn(npix, npix, |i, j| {
        let (ix, iy) = (i % n, i / n);
        let (jx, jy) = (j % n, j / n);
        let lx = jx + n - 1 - ix;
        let ly = jy + n - 1 - iy;
        table[ly * span + lx]
    }))
}

/// Empirical versus exact correlation on the original domain.
#[derive(Debug, Clone)]
pub struct ConnectionReport {
    pub relative_error: f64,
    pub samples: usize,
    pub n: usize,
    pub empirical: DMatrix<f64>,
    pub matern: DMatrix<f64>,
}

impl ConnectionReport {
    /// Empirical and Matérn correlation of every pixel with `pixel`, as `n x n` maps.
    pub fn correlation_maps(&self, pixel: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.empirical.row(pixel).iter().cloned().collect(),
            self.matern.row(pixel).iter().cloned().collect(),
        )
    }

    pub fn center_pixel(&self) -> usize {
        (self.n / 2) * self.n + self.n / 2
    }
}

/// Empirical correlation matrix of restricted prior draws.
pub fn empirical_correlation(
    prec: &SpdePrecision,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let grid = *prec.grid();
    let idx = grid.original_indices();
    let npix = idx.len();
    let mut sampler = PriorSampler::new(prec, seed)?;
    let mut gram = DMatrix::<f64>::zeros(npix, npix);
    let mut sum = vec![0.0; npix];
    const BATCH: usize = 256;
    let mut done = 0;
    while done < samples {
        let b = BATCH.min(samples - done);
        let mut block = DMatrix::<f64>::zeros(npix, b);
        for c in 0..b {
            let x = sampler.draw();
            for (r, &k) in idx.iter().enumerate() {
                block[(r, c)] = x[k];
                sum[r] += x[k];
            }
        }
        let bt = block.transpose();
        gram.gemm(1.0, &block, &bt, 1.0);
        done += b;
    }
    let s = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
    let mut cov = gram;
    for j in 0..npix {
        for i in 0..npix {
            cov[(i, j)] = cov[(i, j)] / s - mean[i] * mean[j];
        }
    }
    let sd: Vec<f64> = (0..npix).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    if sd.iter().any(|&v| v <= 0.0) {
        return Err(Error::DegenerateField("zero empirical variance".into()));
    }
    for j in 0..npix {
        for i in 0..npix {
            cov[(i, j)] /= sd[i] * sd[j];
        }
    }
    Ok(cov)
}

/// `||rho - rho_a||_F / ||rho||_F` from `samples` prior draws.
pub fn validate_connection(spec: &PrecisionSpec, samples: usize, seed: u64) -> Result<ConnectionReport> {
    let prec = SpdePrecision::assemble(spec)?;
    let empirical = empirical_correlation(&prec, samples, seed)?;
    let matern = matern_correlation_matrix(spec)?;
    let relative_error = (&matern - &empirical).norm() / matern.norm();
    Ok(ConnectionReport {
        relative_error,
        samples,
        n: spec.grid.n(),
        empirical,
        matern,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn iso(n: usize, a: f64, nu: f64, ell: f64, bc: Boundary) -> PrecisionSpec {
        PrecisionSpec::isotropic(nu, ell, bc, Grid2D::new(n, a).unwrap()).unwrap()
    }

    fn dense_lap(m: usize, periodic: bool) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(m, m);
        for i in 0..m {
            l[(i, i)] = 2.0;
            if i + 1 < m {
                l[(i, i + 1)] = -1.0;
                l[(i + 1, i)] = -1.0;
            }
        }
        if periodic {
            l[(0, m - 1)] = -1.0;
            l[(m - 1, 0)] = -1.0;
        }
        l
    }

    fn dense_k(m: usize, periodic: bool) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m - 1 {
            k[(i, i + 1)] = 1.0;
            k[(i + 1, i)] = -1.0;
        }
        if periodic {
            k[(0, m - 1)] = -1.0;
            k[(m - 1, 0)] = 1.0;
        }
        k
    }

    // x index fastest: kron(I_y, Lx) acts on x, kron(Ly, I_x) on y.
    fn dense_base(spec: &PrecisionSpec) -> DMatrix<f64> {
        let m = spec.grid.extended_n();
        let per = spec.boundary == Boundary::Periodic;
        let h2 = spec.grid.h().powi(2);
        let (h11, h22, cross) = match spec.variant {
            PriorVariant::Isotropic { ell, .. } => (ell * ell, ell * ell, 0.0),
            PriorVariant::Anisotropic { theta, ell1, ell2, .. } => {
                let (a, b) = (ell2 * theta.sin(), ell1 * theta.cos());
                let (c, d) = (ell2 * theta.cos(), ell1 * theta.sin());
                (a * a + b * b, c * c + d * d, a * c - b * d)
            }
        };
        let id = DMatrix::<f64>::identity(m, m);
        let (l, k) = (dense_lap(m, per), dense_k(m, per));
        DMatrix::<f64>::identity(m * m, m * m)
            + id.kronecker(&l) * (h11 / h2)
            + l.kronecker(&id) * (h22 / h2)
            + k.kronecker(&k) * (2.0 * cross / (4.0 * h2))
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn dirichlet_square_matches_dense() {
        let spec = iso(4, 1.0, 1.0, 0.3, Boundary::Dirichlet);
        let p = assemble_isotropic_precision(&spec).unwrap();
        let b = dense_base(&spec);
        assert!(rel_frob(&p.matrix().to_dense(), &(&b * &b)) < 1e-12);
        assert_eq!(p.matrix().asymmetry(), 0.0);
    }

    #[test]
    fn anisotropic_matches_kronecker_oracle() {
        for bc in [Boundary::Dirichlet, Boundary::Periodic] {
            let spec = PrecisionSpec::anisotropic(2.0, 0.6, 0.3, 0.1, bc, Grid2D::new(6, 1.2).unwrap()).unwrap();
            let p = assemble_anisotropic_precision(&spec).unwrap();
            let b = dense_base(&spec);
            assert!(rel_frob(&p.base().to_dense(), &b) < 1e-13, "{bc:?}");
            assert!(rel_frob(&p.matrix().to_dense(), &(&b * &b * &b)) < 1e-10);
            assert!(p.matrix().asymmetry() < 1e-9 * p.matrix().frobenius_norm());
        }
    }

    #[test]
    fn equal_lengths_reduce_to_isotropic() {
        for theta in [0.0, 0.4, -1.2, FRAC_PI_4] {
            let g = Grid2D::new(7, 1.3).unwrap();
            let a = SpdePrecision::assemble(
                &PrecisionSpec::anisotropic(1.0, theta, 0.2, 0.2, Boundary::Periodic, g).unwrap(),
            )
            .unwrap();
            let i = SpdePrecision::assemble(&PrecisionSpec::isotropic(1.0, 0.2, Boundary::Periodic, g).unwrap())
                .unwrap();
            let scale = i.matrix().frobenius_norm();
            for (r, c, v) in i.matrix().triplets() {
                assert!((a.matrix().get(r, c) - v).abs() <= 1e-12 * scale);
            }
            assert!((a.matrix().frobenius_norm() - scale).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn zero_angle_is_separable() {
        let spec = PrecisionSpec::anisotropic(1.0, 0.0, 0.3, 0.1, Boundary::Dirichlet, Grid2D::new(5, 1.0).unwrap())
            .unwrap();
        let p = SpdePrecision::assemble(&spec).unwrap();
        assert_eq!(p.base().get(0, 6), 0.0);
        assert_eq!(p.base().nnz(), 25 + 2 * 2 * 20);
    }

    #[test]
    fn rejects_non_positive_smoothness() {
        let g = Grid2D::new(5, 1.0).unwrap();
        assert!(PrecisionSpec::isotropic(0.0, 0.2, Boundary::Periodic, g).is_err());
        assert!(PrecisionSpec::isotropic(-1.0, 0.2, Boundary::Periodic, g).is_err());
        assert!(PrecisionSpec::isotropic(1.5, 0.2, Boundary::Periodic, g).is_err());
    }

    #[test]
    fn vanishing_length_gives_identity() {
        let p = SpdePrecision::assemble(&iso(6, 1.0, 2.0, 1e-12, Boundary::Dirichlet)).unwrap();
        let id = CsrMatrix::identity(36);
        assert!((p.matrix().to_dense() - id.to_dense()).norm() < 1e-9);
    }

    #[test]
    fn rejects_non_integer_beta() {
        let g = Grid2D::new(4, 1.0).unwrap();
        assert!(PrecisionSpec::isotropic(0.5, 0.1, Boundary::Periodic, g).is_err());
        assert!(PrecisionSpec::isotropic(1.0, -0.1, Boundary::Periodic, g).is_err());
    }

    #[test]
    fn periodic_symbol_is_known_laplacian_spectrum() {
        let spec = iso(6, 1.5, 1.0, 0.1, Boundary::Periodic);
        let p = SpdePrecision::assemble(&spec).unwrap();
        let m = spec.grid.extended_n();
        let c = (0.1 / spec.grid.h()).powi(2);
        let sym = p.circulant_symbol().unwrap();
        for ky in 0..m {
            for kx in 0..m {
                let lam = |k: usize| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / m as f64).cos();
                let want = (1.0 + c * (lam(kx) + lam(ky))).powi(2);
                assert!((sym[ky * m + kx] - want).abs() < 1e-10 * want);
            }
        }
    }

    #[test]
    fn odd_beta_dirichlet_sampling_rejected() {
        let spec = iso(6, 1.0, 2.0, 0.2, Boundary::Dirichlet);
        assert!(matches!(sample_prior(&spec, 1, 0), Err(Error::UnsupportedSampling(_))));
        assert!(sample_prior(&iso(6, 1.0, 2.0, 0.2, Boundary::Periodic), 1, 0).is_ok());
    }

    #[test]
    fn extension_factors_match_standard_domains() {
        let d = extension_factor(1.0, 0.25, Boundary::Dirichlet).unwrap();
        let p = extension_factor(1.0, 0.25, Boundary::Periodic).unwrap();
        assert!((d - 1.5).abs() < 0.05, "{d}");
        assert!((p - 1.6).abs() < 0.05, "{p}");
        assert!(extension_factor(1.0, 1e-9, Boundary::Periodic).unwrap() - 1.0 < 1e-7);
        assert_eq!(image_extension_factor(1.0, 0.01, Boundary::Periodic).unwrap(), 1.5);
    }

    #[test]
    fn periodic_covariance_matches_spectral_diagonal() {
        let spec = iso(16, 1.0, 1.0, 0.1, Boundary::Periodic);
        let p = SpdePrecision::assemble(&spec).unwrap();
        let sym = p.circulant_symbol().unwrap();
        // every diagonal entry of P^{-1} equals the mean of 1/symbol
        let want = sym.iter().map(|s| 1.0 / s).sum::<f64>() / sym.len() as f64;
        let mut sampler = PriorSampler::new(&p, 11).unwrap();
        let count = 50_000;
        let mut var = vec![0.0; p.dim()];
        for _ in 0..count {
            for (v, x) in var.iter_mut().zip(sampler.draw()) {
                *v += x * x;
            }
        }
        for v in var {
            assert!((v / count as f64 / want - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn dirichlet_samples_have_target_covariance() {
        let spec = iso(4, 1.0, 1.0, 0.2, Boundary::Dirichlet);
        let p = SpdePrecision::assemble(&spec).unwrap();
        let cov = p.matrix().to_dense().try_inverse().unwrap();
        let mut sampler = PriorSampler::new(&p, 3).unwrap();
        let count = 40_000;
        let mut acc = DMatrix::<f64>::zeros(16, 16);
        let mut mean = [0.0; 16];
        for _ in 0..count {
            let x = nalgebra::DVector::from_vec(sampler.draw());
            acc += &x * x.transpose();
            mean.iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v);
        }
        acc /= count as f64;
        assert!(rel_frob(&acc, &cov) < 0.03);
        for (i, m) in mean.iter().enumerate() {
            let sd = cov[(i, i)].sqrt();
            assert!((m / count as f64).abs() <= 4.0 * sd / (count as f64).sqrt());
        }
    }

    #[test]
    fn rotated_prior_is_elongated_along_theta() {
        let spec = PrecisionSpec::anisotropic(
            1.0,
            FRAC_PI_4,
            0.15,
            0.05,
            Boundary::Periodic,
            Grid2D::new(32, 1.0).unwrap(),
        )
        .unwrap();
        let p = SpdePrecision::assemble(&spec).unwrap();
        let mut sampler = PriorSampler::new(&p, 5).unwrap();
        let m = 32i64;
        let (mut along, mut across, mut var) = (0.0, 0.0, 0.0);
        for _ in 0..200 {
            let x = sampler.draw();
            let at = |ix: i64, iy: i64| x[(iy.rem_euclid(m) * m + ix.rem_euclid(m)) as usize];
            for iy in 0..m {
                for ix in 0..m {
                    let v = at(ix, iy);
                    var += v * v;
                    along += v * at(ix + 3, iy + 3);
                    across += v * at(ix + 3, iy - 3);
                }
            }
        }
        assert!(along / var > across / var + 0.2, "{} {}", along / var, across / var);
    }

    #[test]
    fn extension_restores_connection() {
        let g = |a| Grid2D::new(12, a).unwrap();
        let err = |a| {
            validate_connection(&PrecisionSpec::isotropic(1.0, 0.25, Boundary::Dirichlet, g(a)).unwrap(), 4000, 9)
                .unwrap()
                .relative_error
        };
        let (e1, e15) = (err(1.0), err(1.5));
        assert!(e1 > 0.05, "{e1}");
        assert!(e15 < e1, "{e15} vs {e1}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn spectral_apply_matches_sparse(
            n in 3usize..9,
            ell in 0.01f64..0.5,
            theta in -1.5f64..1.5,
            ratio in 1.0f64..4.0,
            nu in 1u32..4,
            seed in 0u64..1000,
        ) {
            let g = Grid2D::new(n, 1.0).unwrap();
            let spec = PrecisionSpec::anisotropic(nu as f64, theta, ell, ell / ratio, Boundary::Periodic, g).unwrap();
            let p = SpdePrecision::assemble(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..p.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = p.apply_vec(&x);
            let b = p.apply_spectral(&x).unwrap();
            let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn assembled_operators_are_symmetric_positive_definite(
            n in 3usize..8,
            ell in 0.01f64..0.4,
            theta in -1.5f64..1.5,
            ratio in 1.0f64..10.0,
            periodic in proptest::bool::ANY,
        ) {
            let bc = if periodic { Boundary::Periodic } else { Boundary::Dirichlet };
            let spec = PrecisionSpec::anisotropic(1.0, theta, ell, ell / ratio, bc, Grid2D::new(n, 1.2).unwrap()).unwrap();
            if let Ok(p) = SpdePrecision::assemble(&spec) {
                let d = p.matrix().to_dense();
                prop_assert!(p.matrix().asymmetry() <= 1e-12 * p.matrix().frobenius_norm());
                prop_assert!(d.cholesky().is_some());
            }
        }
    }
}
