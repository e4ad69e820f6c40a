//! Matérn correlation (isotropic and geometrically anisotropic) and range
//! quantities derived from it.

use crate::bessel::bessel_k;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Below this scaled lag the correlation is reported as its `r -> 0` limit.
const ZERO_LAG: f64 = 1e-12;

/// Correlation level that defines the practical range.
pub const PRACTICAL_RANGE_LEVEL: f64 = 0.05;

/// Fitted Matérn semivariogram hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternFit {
    pub nugget: f64,
    pub sill: f64,
    pub nu: f64,
    pub ell: f64,
    /// Weighted least-squares objective at the fit.
    pub wls_value: f64,
}

impl MaternFit {
    /// Model semivariance at lag `r`.
    pub fn semivariance(&self, r: f64) -> f64 {
        matern_semivariance(r, self.nugget, self.sill, self.nu, self.ell)
    }
}

/// Direction and ratio of geometric anisotropy.
///
/// `theta` is the direction of the longest correlation length `ell1`,
/// measured counter-clockwise from the x-axis in `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyEstimate {
    pub theta: f64,
    pub tau: f64,
    pub ell1: f64,
    pub ell2: f64,
}

impl AnisotropyEstimate {
    pub fn new(theta: f64, ell1: f64, ell2: f64) -> Result<Self> {
        if !(ell1 > 0.0 && ell2 > 0.0) {
            return Err(Error::Domain(format!(
                "correlation lengths must be positive, got {ell1}, {ell2}"
            )));
        }
        let (theta, ell1, ell2) = if ell1 >= ell2 {
            (theta, ell1, ell2)
        } else {
            (theta + std::f64::consts::FRAC_PI_2, ell2, ell1)
        };
        Ok(Self {
            theta: wrap_half_turn(theta),
            tau: ell1 / ell2,
            ell1,
            ell2,
        })
    }

    /// Direction-only estimate with unit `ell1`; lengths are filled in later.
    pub fn from_ratio(theta: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("anisotropy ratio must be positive, got {tau}")));
        }
        Self::new(theta, 1.0, 1.0 / tau)
    }

    pub fn isotropic(ell: f64) -> Result<Self> {
        Self::new(0.0, ell, ell)
    }

    /// Same direction and ratio with a new major length `ell1`.
    pub fn with_major_length(&self, ell1: f64) -> Result<Self> {
        Self::new(self.theta, ell1, ell1 / self.tau)
    }
}

/// Maps an angle into `(-pi/2, pi/2]`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    if a <= -FRAC_PI_2 {
        a += PI;
    }
    a
}

fn check_shape(nu: f64, ell: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("smoothness must be positive, got {nu}")));
    }
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(Error::Domain(format!("range must be positive, got {ell}")));
    }
    Ok(())
}

/// Matérn correlation `(r/ell)^nu K_nu(r/ell) / (2^(nu-1) Gamma(nu))`.
pub fn matern_correlation(r: f64, nu: f64, ell: f64) -> Result<f64> {
    check_shape(nu, ell)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("lag must be finite and non-negative, got {r}")));
    }
    Ok(correlation_unchecked(r / ell, nu))
}

/// Correlation at scaled lag `x = r / ell` without argument validation.
pub(crate) fn correlation_unchecked(x: f64, nu: f64) -> f64 {
    if x < ZERO_LAG {
        return 1.0;
    }
    let k = match bessel_k(nu, x) {
        Ok(k) => k,
        Err(_) => return 0.0,
    };
    if k == 0.0 {
        return 0.0;
    }
    let log_c = nu * x.ln() + k.ln() - (nu - 1.0) * std::f64::consts::LN_2 - ln_gamma(nu);
    log_c.exp().min(1.0)
}

/// Matérn covariance with marginal variance `sigma2`.
pub fn matern_covariance(r: f64, sigma2: f64, nu: f64, ell: f64) -> Result<f64> {
    Ok(sigma2 * matern_correlation(r, nu, ell)?)
}

/// Matérn semivariogram model with nugget `a0` and sill `sigma2`; zero at `r = 0`.
pub fn matern_semivariance(r: f64, a0: f64, sigma2: f64, nu: f64, ell: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    a0 + (sigma2 - a0) * (1.0 - correlation_unchecked(r / ell, nu))
}

/// Distance at which the correlation drops to `level`, by bracketing and bisection.
pub fn correlation_distance(level: f64, nu: f64, ell: f64) -> Result<f64> {
    check_shape(nu, ell)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("correlation level must lie in (0, 1), got {level}")));
    }
    let mut lo = 1e-8 * ell;
    let mut hi = 50.0 * ell * (8.0 * nu).sqrt();
    while correlation_unchecked(hi / ell, nu) > level {
        hi *= 2.0;
    }
    if correlation_unchecked(lo / ell, nu) <= level {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if correlation_unchecked(mid / ell, nu) > level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Distance at which the Matérn correlation equals 0.05.
pub fn practical_range(nu: f64, ell: f64) -> Result<f64> {
    correlation_distance(PRACTICAL_RANGE_LEVEL, nu, ell)
}

/// The `ell * sqrt(8 nu)` range approximation.
pub fn approximate_range(nu: f64, ell: f64) -> f64 {
    ell * (8.0 * nu).sqrt()
}

/// Direction-dependent range `zeta` for a lag pointing along `psi`.
pub fn directional_range(psi: f64, est: &AnisotropyEstimate) -> f64 {
    let d = psi - est.theta;
    let ratio = est.ell1 / est.ell2;
    est.ell1 / (d.cos().powi(2) + ratio * ratio * d.sin().powi(2)).sqrt()
}

/// Anisotropic Matérn correlation for a lag of length `r_w` along direction `psi`.
pub fn anisotropic_matern_correlation(
    r_w: f64,
    psi: f64,
    est: &AnisotropyEstimate,
    nu: f64,
) -> Result<f64> {
    matern_correlation(r_w, nu, directional_range(psi, est))
}
