//! Synthetic inverse problems: blurred, masked, noisy observations of a
//! known truth, and the bundled prior-sampled test images.

use super::forward::{BlurKernel, ForwardModel};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid2D;
use crate::spde::{Boundary, PrecisionSpec, PriorSampler, SpdePrecision};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub blur: BlurKernel,
    /// Fraction of original-domain pixels removed, in `[0, 1)`.
    pub mask_fraction: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_level: f64,
    pub seed: u64,
}

/// `true` = observed; exactly `round(fraction * len)` entries are `false`.
pub fn random_mask(len: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let removed = ((fraction * len as f64).round() as usize).min(len);
    let mut mask = vec![true; len];
    for k in sample(rng, len, removed) {
        mask[k] = false;
    }
    mask
}

fn check(spec: &ObservationSpec) -> Result<()> {
    if !(0.0..1.0).contains(&spec.mask_fraction) {
        return Err(Error::InvalidInput(format!(
            "mask fraction must lie in [0, 1), got {}",
            spec.mask_fraction
        )));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid noise level {}", spec.noise_level)));
    }
    Ok(())
}

/// Observes a truth given on the extended grid. Returns `(data, truth)` on
/// the original domain; masked data pixels hold 0.
pub fn observe_extended(grid: Grid2D, truth_extended: &[f64], spec: &ObservationSpec) -> Result<(Field, Field)> {
    check(spec)?;
    if truth_extended.len() != grid.extended_len() {
        return Err(Error::DimensionMismatch {
            expected: grid.extended_len(),
            got: truth_extended.len(),
        });
    }
    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = random_mask(n * n, spec.mask_fraction, &mut rng);
    let model = ForwardModel::full(grid, spec.blur)?;
    let blurred = grid.restrict(&model.blur_extended(truth_extended));
    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let values: Vec<f64> = blurred
        .iter()
        .zip(&mask)
        .map(|(v, &m)| {
            let e = noise.sample(&mut rng);
            if m {
                v + if spec.noise_level > 0.0 { e } else { 0.0 }
            } else {
                0.0
            }
        })
        .collect();
    let data = Field::masked(n, n, values, mask)?;
    let truth = Field::square(n, grid.restrict(truth_extended))?;
    Ok((data, truth))
}

/// Extends `image` to the computational domain by nearest-pixel replication,
/// then observes it.
pub fn make_synthetic_benchmark(image: &Field, extension: f64, spec: &ObservationSpec) -> Result<(Field, Field)> {
    if image.nx() != image.ny() {
        return Err(Error::InvalidInput("benchmarks need a square image".into()));
    }
    let grid = Grid2D::new(image.nx(), extension)?;
    let n = grid.n();
    let m = grid.extended_n();
    let mut ext = Vec::with_capacity(m * m);
    for ey in 0..m {
        for ex in 0..m {
            let (ix, iy) = grid.nearest_original(ex, ey);
            ext.push(image.values()[iy * n + ix]);
        }
    }
    let (mut data, mut truth) = observe_extended(grid, &ext, spec)?;
    data.band = image.band.clone();
    truth.band = image.band.clone();
    Ok((data, truth))
}

/// One prior draw on the extended grid.
pub fn prior_draw(spec: &PrecisionSpec, seed: u64) -> Result<Vec<f64>> {
    let prec = SpdePrecision::assemble(spec)?;
    Ok(PriorSampler::new(&prec, seed)?.draw())
}

/// Affine map taking the original-domain part of `x` onto `[0, 1]`.
fn normalize_unit(grid: &Grid2D, x: &mut [f64]) {
    let inner = grid.restrict(x);
    let lo = inner.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = inner.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
    x.iter_mut().for_each(|v| *v = (*v - lo) * s);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    /// Isotropic texture, 40% masked and blurred.
    Isotropic,
    /// One anisotropy direction (-75 deg), 60% masked.
    SingleAngle,
    /// Top half at -30 deg, bottom half at -75 deg, 60% masked.
    Regional,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kind: BenchmarkKind,
    pub grid: Grid2D,
    pub data: Field,
    pub truth: Field,
    /// Region labels on the original grid (`0` = top) for the regional image.
    pub labels: Option<Vec<usize>>,
    pub observation: ObservationSpec,
}

pub const BENCHMARK_EXTENSION: f64 = 1.5;

/// Deterministic benchmark on an `n x n` grid. Truths are prior draws scaled
/// to `[0, 1]`.
pub fn bundled_benchmark(kind: BenchmarkKind, n: usize, seed: u64) -> Result<Benchmark> {
    let grid = Grid2D::new(n, BENCHMARK_EXTENSION)?;
    let bc = Boundary::Periodic;
    let (ell1, ell2) = (0.045, 0.015);
    let (mut truth, labels, observation) = match kind {
        BenchmarkKind::Isotropic => (
            prior_draw(&PrecisionSpec::isotropic(1.0, 0.05, bc, grid)?, seed)?,
            None,
            ObservationSpec {
                blur: BlurKernel::standard(),
                mask_fraction: 0.4,
                noise_level: 0.01,
                seed: seed ^ 0x5eed,
            },
        ),
        BenchmarkKind::SingleAngle => (
            prior_draw(
                &PrecisionSpec::anisotropic(1.0, (-75f64).to_radians(), ell1, ell2, bc, grid)?,
                seed,
            )?,
            None,
            ObservationSpec {
                blur: BlurKernel::None,
                mask_fraction: 0.6,
                noise_level: 0.01,
                seed: seed ^ 0x5eed,
            },
        ),
        BenchmarkKind::Regional => {
            let top = prior_draw(
                &PrecisionSpec::anisotropic(1.0, (-30f64).to_radians(), ell1, ell2, bc, grid)?,
                seed,
            )?;
            let bottom = prior_draw(
                &PrecisionSpec::anisotropic(1.0, (-75f64).to_radians(), ell1, ell2, bc, grid)?,
                seed.wrapping_add(1),
            )?;
            let labels: Vec<usize> = (0..n * n).map(|k| if k / n >= n / 2 { 0 } else { 1 }).collect();
            let m = grid.extended_n();
            let glued: Vec<f64> = (0..m * m)
                .map(|k| {
                    let (_, iy) = grid.nearest_original(k % m, k / m);
                    if iy >= n / 2 {
                        top[k]
                    } else {
                        bottom[k]
                    }
                })
                .collect();
            (
                glued,
                Some(labels),
                ObservationSpec {
                    blur: BlurKernel::None,
                    mask_fraction: 0.6,
                    noise_level: 0.01,
                    seed: seed ^ 0x5eed,
                },
            )
        }
    };
    normalize_unit(&grid, &mut truth);
    let (data, truth) = observe_extended(grid, &truth, &observation)?;
    Ok(Benchmark {
        kind,
        grid,
        data,
        truth,
        labels,
        observation,
    })
}
