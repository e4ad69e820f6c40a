//! Empirical semivariograms, Matérn weighted-least-squares fits and
//! directional anisotropy estimation.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::matern::{correlation_unchecked, wrap_half_turn, AnisotropyEstimate, MaternFit};
use crate::optim::{nelder_mead, NelderMeadOptions};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

/// Row-major 2x2 matrix acting on lag vectors.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemivariogramConfig {
    pub max_lag: f64,
    pub n_bins: usize,
    /// Anchor pixels are subsampled above this many observed pixels.
    pub max_pixels: usize,
    pub seed: u64,
}

impl Default for SemivariogramConfig {
    fn default() -> Self {
        Self {
            max_lag: std::f64::consts::SQRT_2 / 10.0,
            n_bins: 25,
            max_pixels: 3000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemivariogramBin {
    /// Mean separation of the pairs in the bin.
    pub lag: f64,
    pub gamma: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSemivariogram {
    pub bins: Vec<SemivariogramBin>,
    pub psi: Option<f64>,
    pub angular_tolerance: Option<f64>,
}

impl EmpiricalSemivariogram {
    pub fn lags(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.lag).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.gamma).collect()
    }

    pub fn total_pairs(&self) -> usize {
        self.bins.iter().map(|b| b.pairs).sum()
    }
}

/// CSV with columns `lag,gamma_hat,pair_count,psi_degrees`.
pub fn write_semivariogram_csv<W: Write>(mut w: W, curves: &[EmpiricalSemivariogram]) -> std::io::Result<()> {
    writeln!(w, "lag,gamma_hat,pair_count,psi_degrees")?;
    for c in curves {
        let psi = c.psi.map(|p| format!("{}", p.to_degrees())).unwrap_or_default();
        for b in &c.bins {
            writeln!(w, "{},{},{},{}", b.lag, b.gamma, b.pairs, psi)?;
        }
    }
    Ok(())
}

#[derive(Clone)]
struct Accum {
    sumsq: Vec<f64>,
    pairs: Vec<usize>,
    lagsum: Vec<f64>,
}

impl Accum {
    fn new(n: usize) -> Self {
        Self {
            sumsq: vec![0.0; n],
            pairs: vec![0; n],
            lagsum: vec![0.0; n],
        }
    }

    fn finish(self, psi: Option<f64>, tol: Option<f64>) -> EmpiricalSemivariogram {
        let bins = (0..self.pairs.len())
            .filter(|&k| self.pairs[k] > 0)
            .map(|k| SemivariogramBin {
                lag: self.lagsum[k] / self.pairs[k] as f64,
                gamma: self.sumsq[k] / (2.0 * self.pairs[k] as f64),
                pairs: self.pairs[k],
            })
            .collect();
        EmpiricalSemivariogram {
            bins,
            psi,
            angular_tolerance: tol,
        }
    }
}

fn in_direction(phi: f64, psi: f64, tol: f64) -> bool {
    let d = wrap_half_turn(phi - psi);
    d > -tol && d <= tol
}

/// Pair sums per direction (or one omnidirectional set when `directions`
/// is empty), with lag vectors optionally mapped through `transform`.
fn accumulate(
    field: &Field,
    cfg: &SemivariogramConfig,
    transform: Option<Mat2>,
    directions: &[(f64, f64)],
) -> Result<Vec<Accum>> {
    if !(cfg.max_lag > 0.0) || cfg.n_bins < 2 {
        return Err(Error::InvalidInput("semivariogram needs max_lag > 0 and at least 2 bins".into()));
    }
    let (nx, ny) = (field.nx() as i64, field.ny() as i64);
    let mask = field.mask();
    let vals = field.values();
    let observed: Vec<usize> = (0..field.len()).filter(|&k| mask[k]).collect();
    if observed.len() < 2 {
        return Err(Error::DegenerateField("fewer than two observed values".into()));
    }
    let subsample = observed.len() > cfg.max_pixels;
    let anchors: Vec<usize> = if subsample {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut pick: Vec<usize> = sample(&mut rng, observed.len(), cfg.max_pixels)
            .into_iter()
            .map(|i| observed[i])
            .collect();
        pick.sort_unstable();
        pick
    } else {
        observed
    };

    let s = field.spacing();
    let width = cfg.max_lag / cfg.n_bins as f64;
    let reach = (cfg.max_lag / s).floor() as i64;
    let n_sets = directions.len().max(1);
    let mut acc = vec![Accum::new(cfg.n_bins); n_sets];
    let mut targets = Vec::with_capacity(n_sets);
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            // half plane unless anchors are subsampled
            if !subsample && !(dy > 0 || (dy == 0 && dx > 0)) {
                continue;
            }
            if dx == 0 && dy == 0 {
                continue;
            }
            let w = [dx as f64 * s, dy as f64 * s];
            if w[0].hypot(w[1]) > cfg.max_lag {
                continue;
            }
            let u = match transform {
                Some(t) => [t[0][0] * w[0] + t[0][1] * w[1], t[1][0] * w[0] + t[1][1] * w[1]],
                None => w,
            };
            let d = u[0].hypot(u[1]);
            if d > cfg.max_lag || d == 0.0 {
                continue;
            }
            targets.clear();
            if directions.is_empty() {
                targets.push(0);
            } else {
                let phi = u[1].atan2(u[0]);
                targets.extend(
                    directions
                        .iter()
                        .enumerate()
                        .filter(|(_, &(psi, tol))| in_direction(phi, psi, tol))
                        .map(|(i, _)| i),
                );
                if targets.is_empty() {
                    continue;
                }
            }
            let bin = ((d / width).ceil() as usize).clamp(1, cfg.n_bins) - 1;
            let (mut sq, mut cnt) = (0.0, 0usize);
            for &a in &anchors {
                let (ix, iy) = ((a as i64) % nx, (a as i64) / nx);
                let (jx, jy) = (ix + dx, iy + dy);
                if jx < 0 || jy < 0 || jx >= nx || jy >= ny {
                    continue;
                }
                let b = (jy * nx + jx) as usize;
                if mask[b] {
                    let diff = vals[a] - vals[b];
                    sq += diff * diff;
                    cnt += 1;
                }
            }
            if cnt == 0 {
                continue;
            }
            for &t in &targets {
                acc[t].sumsq[bin] += sq;
                acc[t].pairs[bin] += cnt;
                acc[t].lagsum[bin] += d * cnt as f64;
            }
        }
    }
    Ok(acc)
}

/// Omnidirectional semivariogram with the given configuration.
pub fn semivariogram(field: &Field, cfg: &SemivariogramConfig) -> Result<EmpiricalSemivariogram> {
    semivariogram_transformed(field, cfg, None)
}

/// Omnidirectional semivariogram with lags measured after `transform`.
pub fn semivariogram_transformed(
    field: &Field,
    cfg: &SemivariogramConfig,
    transform: Option<Mat2>,
) -> Result<EmpiricalSemivariogram> {
    let acc = accumulate(field, cfg, transform, &[])?;
    let sv = acc.into_iter().next().unwrap().finish(None, None);
    if sv.bins.is_empty() {
        return Err(Error::DegenerateField(format!(
            "no observed pair within max_lag {}",
            cfg.max_lag
        )));
    }
    Ok(sv)
}

pub fn empirical_semivariogram(field: &Field, max_lag: f64, n_bins: usize) -> Result<EmpiricalSemivariogram> {
    let cfg = SemivariogramConfig {
        max_lag,
        n_bins,
        ..Default::default()
    };
    semivariogram(field, &cfg)
}

pub fn directional_semivariogram(
    field: &Field,
    psi: f64,
    angular_tol: f64,
    max_lag: f64,
    n_bins: usize,
) -> Result<EmpiricalSemivariogram> {
    let cfg = SemivariogramConfig {
        max_lag,
        n_bins,
        ..Default::default()
    };
    Ok(directional_semivariograms(field, &cfg, &[psi], angular_tol, None)?.remove(0))
}

/// One semivariogram per direction in `psis`, in a single pass over the pairs.
pub fn directional_semivariograms(
    field: &Field,
    cfg: &SemivariogramConfig,
    psis: &[f64],
    angular_tol: f64,
    transform: Option<Mat2>,
) -> Result<Vec<EmpiricalSemivariogram>> {
    let dirs: Vec<(f64, f64)> = psis.iter().map(|&p| (wrap_half_turn(p), angular_tol)).collect();
    let acc = accumulate(field, cfg, transform, &dirs)?;
    let mut out = Vec::with_capacity(dirs.len());
    for (a, &(psi, tol)) in acc.into_iter().zip(&dirs) {
        let sv = a.finish(Some(psi), Some(tol));
        if sv.bins.is_empty() {
            return Err(Error::DegenerateField(format!(
                "direction {:.1} deg collects no pairs",
                psi.to_degrees()
            )));
        }
        out.push(sv);
    }
    Ok(out)
}

/// Weighted least-squares objective `sum n/(2 gamma^2) (gamma_hat - gamma)^2`.
pub fn wls_objective(emp: &EmpiricalSemivariogram, nugget: f64, sill: f64, nu: f64, ell: f64) -> f64 {
    emp.bins
        .iter()
        .map(|b| {
            let g = nugget + (sill - nugget) * (1.0 - correlation_unchecked(b.lag / ell, nu));
            let denom = (g * g).max(1e-12);
            b.pairs as f64 / (2.0 * denom) * (b.gamma - g).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub nu_candidates: Vec<f64>,
    /// Extra `(nugget, sill, ell)` start points tried for every candidate.
    pub extra_starts: Vec<[f64; 3]>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            nu_candidates: vec![1.0, 2.0, 3.0],
            extra_starts: Vec::new(),
        }
    }
}

pub fn fit_matern_semivariogram(emp: &EmpiricalSemivariogram, nu_candidates: &[f64]) -> Result<MaternFit> {
    fit_matern_semivariogram_with(
        emp,
        &FitOptions {
            nu_candidates: nu_candidates.to_vec(),
            extra_starts: Vec::new(),
        },
    )
}

/// Multi-start Nelder–Mead over `(ln ell, ln(sill - nugget), ln nugget)` for
/// each fixed `nu`; the candidate with the smallest objective wins.
pub fn fit_matern_semivariogram_with(emp: &EmpiricalSemivariogram, opts: &FitOptions) -> Result<MaternFit> {
    if emp.bins.len() < 4 {
        return Err(Error::FitFailure(format!("need at least 4 bins, got {}", emp.bins.len())));
    }
    if opts.nu_candidates.is_empty() || opts.nu_candidates.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::FitFailure("smoothness candidates must be positive and nonempty".into()));
    }
    let gammas = emp.gammas();
    if gammas.iter().all(|&g| g <= 0.0) {
        return Err(Error::DegenerateField("semivariogram is identically zero".into()));
    }
    let r_max = emp.bins.last().unwrap().lag;
    let half = gammas.len() / 2;
    let upper = gammas[half..].iter().sum::<f64>() / (gammas.len() - half) as f64;
    let sill0 = upper.max(gammas.iter().cloned().fold(0.0, f64::max) * 0.5).max(1e-12);
    let nugget0 = (0.5 * gammas[0].min(sill0)).max(1e-3 * sill0);
    let partial0 = (sill0 - nugget0).max(1e-3 * sill0);
    let nm = NelderMeadOptions::default();

    let mut best: Option<MaternFit> = None;
    for &nu in &opts.nu_candidates {
        let objective = |p: &[f64]| {
            let (ell, partial, nugget) = (p[0].exp(), p[1].exp(), p[2].exp());
            wls_objective(emp, nugget, nugget + partial, nu, ell)
        };
        let mut starts: Vec<Vec<f64>> = [0.1, 0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|f| vec![(f * r_max / (8.0 * nu).sqrt()).ln(), partial0.ln(), nugget0.ln()])
            .collect();
        for s in &opts.extra_starts {
            let [nugget, sill, ell] = *s;
            if nugget > 0.0 && sill > nugget && ell > 0.0 {
                starts.push(vec![ell.ln(), (sill - nugget).ln(), nugget.ln()]);
            }
        }
        for x0 in starts {
            let m1 = nelder_mead(objective, &x0, &nm);
            let m = nelder_mead(objective, &m1.x, &NelderMeadOptions { initial_step: 0.05, ..nm });
            if !m.value.is_finite() {
                continue;
            }
            let (ell, partial, nugget) = (m.x[0].exp(), m.x[1].exp(), m.x[2].exp());
            let fit = MaternFit {
                nugget,
                sill: nugget + partial,
                nu,
                ell,
                wls_value: m.value,
            };
            if best.as_ref().is_none_or(|b| fit.wls_value < b.wls_value) {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| Error::FitFailure("no finite objective for any smoothness candidate".into()))
}

/// Tricube-weighted local linear regression evaluated at `at`.
pub fn loess(x: &[f64], y: &[f64], span: f64, at: &[f64]) -> Vec<f64> {
    let n = x.len();
    let q = ((span * n as f64).ceil() as usize).clamp(2.min(n), n);
    let mut dist = vec![0.0; n];
    at.iter()
        .map(|&x0| {
            for (d, xi) in dist.iter_mut().zip(x) {
                *d = (xi - x0).abs();
            }
            let mut sorted = dist.clone();
            sorted.sort_by(f64::total_cmp);
            let dmax = sorted[q - 1].max(1e-300) * if q == n { 1.0 + 1e-9 } else { 1.0 };
            let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let u = dist[i] / dmax;
                if u >= 1.0 {
                    continue;
                }
                let w = (1.0 - u * u * u).powi(3);
                let xi = x[i] - x0;
                sw += w;
                swx += w * xi;
                swy += w * y[i];
                swxx += w * xi * xi;
                swxy += w * xi * y[i];
            }
            if sw <= 0.0 {
                let j = (0..n).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
                return y[j];
            }
            let det = sw * swxx - swx * swx;
            if det.abs() <= 1e-12 * sw * swxx.max(1e-300) {
                swy / sw
            } else {
                // intercept of the local line centred at x0
                (swxx * swy - swx * swxy) / det
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnisotropyConfig {
    pub semivariogram: SemivariogramConfig,
    pub psi_step: f64,
    pub angular_tolerance: f64,
    pub gamma_crit_fraction: f64,
    pub loess_span: f64,
    pub loess_points: usize,
    pub nu_candidates: Vec<f64>,
    /// Ratios at or below this are treated as isotropic.
    pub tau_threshold: f64,
}

impl Default for AnisotropyConfig {
    fn default() -> Self {
        Self {
            semivariogram: SemivariogramConfig::default(),
            psi_step: 15f64.to_radians(),
            angular_tolerance: 7.5f64.to_radians(),
            gamma_crit_fraction: 0.75,
            loess_span: 0.5,
            loess_points: 200,
            nu_candidates: vec![1.0, 2.0, 3.0],
            tau_threshold: 1.3,
        }
    }
}

impl AnisotropyConfig {
    /// Directions `-90 + step, ..., 90` degrees.
    pub fn directions(&self) -> Vec<f64> {
        let k = (std::f64::consts::PI / self.psi_step).round().max(1.0) as usize;
        (1..=k).map(|i| -FRAC_PI_2 + i as f64 * self.psi_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalRange {
    pub psi: f64,
    pub range_at_crit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalRangeProfile {
    pub records: Vec<DirectionalRange>,
    pub gamma_crit: f64,
    pub prefit: MaternFit,
    pub semivariograms: Vec<EmpiricalSemivariogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyResult {
    /// Direction and ratio; lengths are the crossing distances.
    pub estimate: AnisotropyEstimate,
    pub profile: DirectionalRangeProfile,
    pub anisotropic: bool,
}

/// First lag where the loess curve reaches `level`, linearly interpolated.
fn first_crossing(lags: &[f64], curve: &[f64], level: f64) -> Option<f64> {
    if curve.first()? >= &level {
        return Some(lags[0]);
    }
    for k in 1..curve.len() {
        if curve[k] >= level {
            let t = (level - curve[k - 1]) / (curve[k] - curve[k - 1]);
            return Some(lags[k - 1] + t * (lags[k] - lags[k - 1]));
        }
    }
    None
}

pub fn estimate_anisotropy(field: &Field, cfg: &AnisotropyConfig) -> Result<AnisotropyResult> {
    estimate_anisotropy_transformed(field, cfg, None)
}

/// Anisotropy estimate with lag vectors mapped through `transform`.
pub fn estimate_anisotropy_transformed(
    field: &Field,
    cfg: &AnisotropyConfig,
    transform: Option<Mat2>,
) -> Result<AnisotropyResult> {
    let omni = semivariogram_transformed(field, &cfg.semivariogram, transform)?;
    let prefit = fit_matern_semivariogram(&omni, &cfg.nu_candidates)?;
    let gamma_crit = prefit.nugget + cfg.gamma_crit_fraction * (prefit.sill - prefit.nugget);
    let psis = cfg.directions();
    let curves = directional_semivariograms(field, &cfg.semivariogram, &psis, cfg.angular_tolerance, transform)?;
    let mut records = Vec::with_capacity(psis.len());
    for sv in &curves {
        let (x, y) = (sv.lags(), sv.gammas());
        let (lo, hi) = (x[0], *x.last().unwrap());
        let m = cfg.loess_points.max(2);
        let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
        let smooth = loess(&x, &y, cfg.loess_span, &grid);
        let psi = sv.psi.unwrap();
        let r = first_crossing(&grid, &smooth, gamma_crit).ok_or(Error::NoCrossing {
            psi_degrees: psi.to_degrees(),
            max_lag: cfg.semivariogram.max_lag,
        })?;
        records.push(DirectionalRange { psi, range_at_crit: r });
    }
    // ties go to the first direction in the list
    let imax = (0..records.len()).fold(0, |b, i| {
        if records[i].range_at_crit > records[b].range_at_crit {
            i
        } else {
            b
        }
    });
    let theta = records[imax].psi;
    let target = wrap_half_turn(theta + FRAC_PI_2);
    let iperp = (0..records.len())
        .min_by(|&a, &b| {
            let da = wrap_half_turn(records[a].psi - target).abs();
            let db = wrap_half_turn(records[b].psi - target).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    let estimate = AnisotropyEstimate::new(theta, records[imax].range_at_crit, records[iperp].range_at_crit)?;
    Ok(AnisotropyResult {
        anisotropic: estimate.tau > cfg.tau_threshold,
        estimate,
        profile: DirectionalRangeProfile {
            records,
            gamma_crit,
            prefit,
            semivariograms: curves,
        },
    })
}

/// `u = [[cos, sin], [-tau sin, tau cos]] w`.
pub fn isotropizing_transform(est: &AnisotropyEstimate) -> Mat2 {
    let (s, c) = est.theta.sin_cos();
    [[c, s], [-est.tau * s, est.tau * c]]
}

/// Inverse of [`isotropizing_transform`].
pub fn deisotropizing_transform(est: &AnisotropyEstimate) -> Mat2 {
    let (s, c) = est.theta.sin_cos();
    let it = 1.0 / est.tau;
    [[c, -s * it], [s, c * it]]
}

fn apply_mat(t: &Mat2, p: [f64; 2]) -> [f64; 2] {
    [t[0][0] * p[0] + t[0][1] * p[1], t[1][0] * p[0] + t[1][1] * p[1]]
}

pub fn isotropize_coordinates(coords: &[[f64; 2]], est: &AnisotropyEstimate) -> Vec<[f64; 2]> {
    let t = isotropizing_transform(est);
    coords.iter().map(|&p| apply_mat(&t, p)).collect()
}

pub fn deisotropize_coordinates(coords: &[[f64; 2]], est: &AnisotropyEstimate) -> Vec<[f64; 2]> {
    let t = deisotropizing_transform(est);
    coords.iter().map(|&p| apply_mat(&t, p)).collect()
}

/// Omnidirectional fit in isotropized coordinates: returns the fit (whose
/// `ell` is `ell1`) and the completed anisotropy estimate.
pub fn fit_anisotropic_lengths(
    field: &Field,
    cfg: &SemivariogramConfig,
    direction: &AnisotropyEstimate,
    nu_candidates: &[f64],
) -> Result<(MaternFit, AnisotropyEstimate)> {
    let sv = semivariogram_transformed(field, cfg, Some(isotropizing_transform(direction)))?;
    let fit = fit_matern_semivariogram(&sv, nu_candidates)?;
    Ok((fit, direction.with_major_length(fit.ell)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matern::matern_semivariance;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_field(n: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::square(n, (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn constant_field_has_zero_semivariance() {
        let f = Field::square(10, vec![3.5; 100]).unwrap();
        let sv = empirical_semivariogram(&f, 0.4, 8).unwrap();
        assert!(sv.bins.iter().all(|b| b.gamma == 0.0));
        assert!(matches!(
            fit_matern_semivariogram(&sv, &[1.0, 2.0]),
            Err(Error::DegenerateField(_))
        ));
    }

    #[test]
    fn two_points() {
        let f = Field::new(2, 1, vec![0.0, 2.0]).unwrap();
        let sv = empirical_semivariogram(&f, 1.0, 2).unwrap();
        assert_eq!(sv.bins.len(), 1);
        assert_eq!(sv.bins[0].gamma, 2.0);
        assert_eq!(sv.bins[0].pairs, 1);
        assert_eq!(sv.bins[0].lag, 0.5);
    }

    #[test]
    fn white_noise_is_flat_at_variance() {
        let f = noise_field(64, 1);
        let sv = empirical_semivariogram(&f, 0.14, 25).unwrap();
        for b in &sv.bins {
            assert!((b.gamma - 1.0).abs() < 0.1, "{b:?}");
        }
    }

    #[test]
    fn masked_pixels_never_pair() {
        let mut vals = vec![0.0; 16];
        vals[5] = 1e6;
        let mut mask = vec![true; 16];
        mask[5] = false;
        let f = Field::masked(4, 4, vals, mask).unwrap();
        let sv = empirical_semivariogram(&f, 1.0, 4).unwrap();
        assert!(sv.bins.iter().all(|b| b.gamma == 0.0));
        assert!(empirical_semivariogram(&Field::new(1, 1, vec![1.0]).unwrap(), 1.0, 4).is_err());
    }

    #[test]
    fn vertical_pairs_see_no_change_in_x_only_field() {
        let n = 16;
        let vals: Vec<f64> = (0..n * n).map(|k| ((k % n) as f64 * 0.7).sin()).collect();
        let f = Field::square(n, vals).unwrap();
        let sv = directional_semivariogram(&f, FRAC_PI_2, 7.5f64.to_radians(), 0.4, 10).unwrap();
        assert!(sv.bins.iter().all(|b| b.gamma == 0.0));
    }

    #[test]
    fn directions_partition_the_omnidirectional_pairs() {
        let f = noise_field(24, 3);
        let cfg = SemivariogramConfig {
            max_lag: 0.3,
            n_bins: 12,
            ..Default::default()
        };
        let acfg = AnisotropyConfig::default();
        let omni = accumulate(&f, &cfg, None, &[]).unwrap().remove(0);
        let dirs: Vec<(f64, f64)> = acfg.directions().iter().map(|&p| (p, acfg.angular_tolerance)).collect();
        let per = accumulate(&f, &cfg, None, &dirs).unwrap();
        for k in 0..cfg.n_bins {
            let pairs: usize = per.iter().map(|a| a.pairs[k]).sum();
            let sq: f64 = per.iter().map(|a| a.sumsq[k]).sum();
            assert_eq!(pairs, omni.pairs[k]);
            assert!((sq - omni.sumsq[k]).abs() <= 1e-12 * omni.sumsq[k].max(1.0));
        }
    }

    #[test]
    fn exact_model_is_recovered() {
        let lags: Vec<f64> = (1..=25).map(|k| k as f64 * 0.14 / 25.0).collect();
        let emp = EmpiricalSemivariogram {
            bins: lags
                .iter()
                .map(|&r| SemivariogramBin {
                    lag: r,
                    gamma: matern_semivariance(r, 0.2, 1.0, 1.0, 0.05),
                    pairs: 100,
                })
                .collect(),
            psi: None,
            angular_tolerance: None,
        };
        let fit = fit_matern_semivariogram(&emp, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fit.nu, 1.0);
        assert!((fit.ell / 0.05 - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.nugget - 0.2).abs() < 1e-3 && (fit.sill - 1.0).abs() < 1e-3);
        assert!(fit.wls_value < 1e-8);
    }

    #[test]
    fn white_noise_fits_pure_nugget() {
        let f = noise_field(64, 5);
        let sv = empirical_semivariogram(&f, 0.14, 25).unwrap();
        let fit = fit_matern_semivariogram(&sv, &[1.0, 2.0, 3.0]).unwrap();
        // nugget carries nearly all of the sill once every lag exceeds ell
        let g = fit.semivariance(sv.bins[0].lag);
        assert!((g / fit.sill) > 0.9, "{fit:?}");
    }

    #[test]
    fn fit_never_worse_than_truth_start() {
        let f = noise_field(32, 9);
        let sv = empirical_semivariogram(&f, 0.2, 12).unwrap();
        let truth = [0.3, 1.0, 0.04];
        let opts = FitOptions {
            nu_candidates: vec![2.0],
            extra_starts: vec![truth],
        };
        let fit = fit_matern_semivariogram_with(&sv, &opts).unwrap();
        assert!(fit.wls_value <= wls_objective(&sv, truth[0], truth[1], 2.0, truth[2]));
    }

    #[test]
    fn loess_reproduces_lines() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let at = [0.0, 1.234, 2.9];
        for (v, a) in loess(&x, &y, 0.5, &at).iter().zip(at) {
            assert!((v - (2.0 - 0.5 * a)).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_roundtrip_and_identity() {
        let est = AnisotropyEstimate::from_ratio(0.7, 3.0).unwrap();
        let pts = [[0.3, -0.2], [1.0, 2.0], [-0.5, 0.25]];
        let back = deisotropize_coordinates(&isotropize_coordinates(&pts, &est), &est);
        for (p, q) in pts.iter().zip(&back) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
        let id = AnisotropyEstimate::from_ratio(0.0, 1.0).unwrap();
        assert_eq!(isotropize_coordinates(&pts, &id), pts.to_vec());
    }

    #[test]
    fn csv_columns() {
        let f = noise_field(8, 2);
        let sv = directional_semivariogram(&f, 0.0, 0.2, 0.5, 4).unwrap();
        let mut buf = Vec::new();
        write_semivariogram_csv(&mut buf, &[sv]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lag,gamma_hat,pair_count,psi_degrees\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",0"));
    }

    #[test]
    fn twelve_directions_on_fifteen_degrees() {
        let d = AnisotropyConfig::default().directions();
        assert_eq!(d.len(), 12);
        assert!((d[0].to_degrees() + 75.0).abs() < 1e-9);
        assert!((d[11].to_degrees() - 90.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shift_and_scale_behaviour(seed in 0u64..500, shift in -10.0f64..10.0, scale in 0.1f64..5.0) {
            let f = noise_field(12, seed);
            let g = f.with_values(f.values().iter().map(|v| scale * v + shift).collect()).unwrap();
            let a = empirical_semivariogram(&f, 0.3, 6).unwrap();
            let b = empirical_semivariogram(&g, 0.3, 6).unwrap();
            for (x, y) in a.bins.iter().zip(&b.bins) {
                prop_assert_eq!(x.pairs, y.pairs);
                prop_assert!((y.gamma - scale * scale * x.gamma).abs() <= 1e-9 * (1.0 + y.gamma));
            }
        }

        #[test]
        fn bins_are_ordered_and_nonnegative(seed in 0u64..500, n in 3usize..14, nb in 2usize..20) {
            let f = noise_field(n, seed);
            let sv = empirical_semivariogram(&f, 0.5, nb).unwrap();
            for w in sv.bins.windows(2) {
                prop_assert!(w[0].lag < w[1].lag);
            }
            prop_assert!(sv.bins.iter().all(|b| b.gamma >= 0.0 && b.pairs >= 1));
        }
    }
}
