//! Iterative semivariogram drivers: hyperparameters are fitted to the data,
//! a MAP estimate is computed with the resulting prior, and the fit is
//! repeated on the estimate until the hyperparameters settle.

use super::forward::ForwardModel;
use super::gcv::{gcv_alpha, oracle_alpha, AlphaGrid, AlphaSelection, TraceMethod};
use super::map::{map_estimate, MapSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::matern::{AnisotropyEstimate, MaternFit};
use crate::metrics::{compare, Statistics};
use crate::operator::{IdentityPrecision, PrecisionOperator};
use crate::regional::{RegionPartition, RegionalOperator};
use crate::semivariogram::{
    estimate_anisotropy, fit_anisotropic_lengths, fit_matern_semivariogram, semivariogram, AnisotropyConfig,
};
use crate::spde::{image_extension_factor, Boundary, PrecisionSpec, SpdePrecision};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AlphaMode {
    Fixed {
        value: f64,
    },
    #[default]
    Gcv,
    /// Maximize correlation with a supplied truth.
    Oracle,
    /// Known noise standard deviation `sigma`: `alpha = sigma^2 delta`, with the
    /// prior scale `delta` matching the prior's marginal variance to the
    /// fitted partial sill.
    KnownNoise {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub boundary: Boundary,
    pub alpha: AlphaMode,
    pub alpha_grid: AlphaGrid,
    pub trace: TraceMethod,
    pub solver: SolverOptions,
    /// Semivariogram, candidate smoothness and directional settings, shared
    /// by every fit.
    pub variogram: AnisotropyConfig,
    pub max_iterations: usize,
    /// Relative change in each length below which it counts as settled.
    pub ell_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            boundary: Boundary::Periodic,
            alpha: AlphaMode::Gcv,
            alpha_grid: AlphaGrid::default(),
            trace: TraceMethod::default(),
            solver: SolverOptions::default(),
            variogram: AnisotropyConfig::default(),
            max_iterations: 10,
            ell_tolerance: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if let AlphaMode::Fixed { value } = self.alpha {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidInput(format!("fixed alpha must be positive, got {value}")));
            }
        }
        if let AlphaMode::KnownNoise { sigma } = self.alpha {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidInput(format!("noise level must be positive, got {sigma}")));
            }
        }
        if !(self.solver.cg.tol > 0.0 && self.solver.cg.tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "CG tolerance must lie in (0, 1), got {}",
                self.solver.cg.tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if self.variogram.nu_candidates.is_empty() {
            return Err(Error::InvalidInput("no smoothness candidates".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicParams {
    pub theta: f64,
    pub tau: f64,
    pub nu: f64,
    pub ell1: f64,
    pub ell2: f64,
}

impl AnisotropicParams {
    fn from_fit(nu: f64, geo: &AnisotropyEstimate) -> Self {
        Self {
            theta: geo.theta,
            tau: geo.tau,
            nu,
            ell1: geo.ell1,
            ell2: geo.ell2,
        }
    }

    fn spec(&self, boundary: Boundary, model: &ForwardModel) -> Result<PrecisionSpec> {
        PrecisionSpec::anisotropic(self.nu, self.theta, self.ell1, self.ell2, boundary, *model.grid())
    }

    fn settled(&self, prev: &Self, tol: f64) -> bool {
        (self.theta - prev.theta).abs() < 1e-9
            && self.nu == prev.nu
            && rel_change(self.ell1, prev.ell1) < tol
            && rel_change(self.ell2, prev.ell2) < tol
    }
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "lowercase")]
pub enum Hyperparameters {
    Isotropic { nu: f64, ell: f64 },
    Anisotropic(AnisotropicParams),
    Regional { regions: Vec<AnisotropicParams> },
    Tikhonov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Isotropic,
    Anisotropic,
    Regional,
    Tikhonov,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" => Ok(PriorKind::Isotropic),
            "anisotropic" => Ok(PriorKind::Anisotropic),
            "regional" => Ok(PriorKind::Regional),
            "tikhonov" => Ok(PriorKind::Tikhonov),
            other => Err(Error::Parse(format!("unknown prior '{other}'"))),
        }
    }
}

/// Hyperparameters fitted to the estimate `x_j` (`x_0` is the data), with
/// the alpha and CG count of the solve that produced `x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub hyperparameters: Hyperparameters,
    pub alpha: Option<f64>,
    pub cg_iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub prior: PriorKind,
    #[serde(skip)]
    pub estimate: Field,
    /// Hyperparameters of the prior behind `estimate`.
    pub hyperparameters: Hyperparameters,
    pub alpha: f64,
    pub alpha_selection: Option<AlphaSelection>,
    pub history: Vec<IterationRecord>,
    /// Number of MAP solves.
    pub iterations: usize,
    pub converged: bool,
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub metrics: Option<Statistics>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Hyperparameters of the last fit.
    pub fn last_fit(&self) -> &Hyperparameters {
        &self.history.last().expect("history is never empty").hyperparameters
    }
}

struct Problem<'a> {
    b: &'a Field,
    data: Vec<f64>,
    model: &'a ForwardModel,
    truth: Option<&'a Field>,
    cfg: &'a PipelineConfig,
}

impl<'a> Problem<'a> {
    fn new(b: &'a Field, model: &'a ForwardModel, truth: Option<&'a Field>, cfg: &'a PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if b.mask() != model.mask() {
            return Err(Error::InvalidInput("data mask differs from the forward-model mask".into()));
        }
        if b.observed_count() == 0 {
            return Err(Error::InvalidInput("data has no observed pixels".into()));
        }
        if let Some(t) = truth {
            if t.nx() != b.nx() || t.ny() != b.ny() {
                return Err(Error::DimensionMismatch {
                    expected: b.len(),
                    got: t.len(),
                });
            }
        }
        if cfg.alpha == AlphaMode::Oracle && truth.is_none() {
            return Err(Error::InvalidInput("oracle alpha needs a truth image".into()));
        }
        Ok(Self {
            data: model.data_from_field(b)?,
            b,
            model,
            truth,
            cfg,
        })
    }

    /// `scale` is the prior scale `delta`, used only with a known noise level.
    fn solve(&self, prior: &dyn PrecisionOperator, scale: f64) -> Result<(MapSolution, f64, Option<AlphaSelection>)> {
        let cfg = self.cfg;
        let (alpha, sel) = match cfg.alpha {
            AlphaMode::Fixed { value } => (value, None),
            AlphaMode::KnownNoise { sigma } => {
                let a = sigma * sigma * scale;
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::NonFinite(format!("known-noise alpha {a}")));
                }
                (a, None)
            }
            AlphaMode::Gcv => {
                let s = gcv_alpha(self.model, prior, &self.data, &cfg.alpha_grid, &cfg.trace, &cfg.solver)?;
                (s.alpha, Some(s))
            }
            AlphaMode::Oracle => {
                let truth = self.truth.expect("checked in Problem::new");
                let s = oracle_alpha(self.model, prior, &self.data, truth.values(), &cfg.alpha_grid, &cfg.solver)?;
                (s.alpha, Some(s))
            }
        };
        let sol = map_estimate(self.model, prior, &self.data, alpha, &cfg.solver)?;
        Ok((sol, alpha, sel))
    }

    fn field(&self, estimate: &[f64]) -> Result<Field> {
        Ok(self.b.with_values(estimate.to_vec())?.fully_observed())
    }

    fn extension_warning(&self, nu: f64, ell: f64, warnings: &mut Vec<String>) {
        if let Ok(a) = image_extension_factor(nu, ell, self.cfg.boundary) {
            let have = self.model.grid().extension();
            if have + 1e-12 < a {
                let w = format!("extension a={have} is below the recommended {a:.3} for nu={nu}, ell={ell:.4}");
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        prior: PriorKind,
        sol: MapSolution,
        hyperparameters: Hyperparameters,
        alpha: f64,
        alpha_selection: Option<AlphaSelection>,
        history: Vec<IterationRecord>,
        converged: bool,
        warnings: Vec<String>,
    ) -> Result<SolveReport> {
        let metrics = match self.truth {
            Some(t) => Some(compare(&sol.estimate, t.values())?),
            None => None,
        };
        let iterations = history.iter().filter(|r| r.alpha.is_some()).count().max(1);
        Ok(SolveReport {
            prior,
            estimate: self.field(&sol.estimate)?,
            hyperparameters,
            alpha,
            alpha_selection,
            history,
            iterations,
            converged,
            cg_iterations: sol.iterations,
            relative_residual: sol.relative_residual,
            metrics,
            warnings,
        })
    }
}

/// Isotropic driver: fit `(nu, ell)`, solve, refit on the estimate, until
/// `nu` repeats and `ell` changes by less than the tolerance.
pub fn run_isotropic_pipeline(
    b: &Field,
    model: &ForwardModel,
    truth: Option<&Field>,
    cfg: &PipelineConfig,
) -> Result<SolveReport> {
    let pb = Problem::new(b, model, truth, cfg)?;
    let fit_to = |x: &Field| -> Result<MaternFit> {
        let sv = semivariogram(x, &cfg.variogram.semivariogram)?;
        fit_matern_semivariogram(&sv, &cfg.variogram.nu_candidates)
    };
    let mut fit = fit_to(b)?;
    let (mut nu, mut ell) = (fit.nu, fit.ell);
    let mut history = vec![IterationRecord {
        iteration: 0,
        hyperparameters: Hyperparameters::Isotropic { nu, ell },
        alpha: None,
        cg_iterations: None,
    }];
    let mut warnings = Vec::new();
    let mut j = 0;
    loop {
        j += 1;
        pb.extension_warning(nu, ell, &mut warnings);
        let spec = PrecisionSpec::isotropic(nu, ell, cfg.boundary, *model.grid())?;
        let prior = SpdePrecision::assemble(&spec)?;
        let (sol, alpha, sel) = pb.solve(&prior, prior_scale(&prior, &fit)?)?;
        let next = fit_to(&pb.field(&sol.estimate)?)?;
        let (nu_new, ell_new) = (next.nu, next.ell);
        history.push(IterationRecord {
            iteration: j,
            hyperparameters: Hyperparameters::Isotropic { nu: nu_new, ell: ell_new },
            alpha: Some(alpha),
            cg_iterations: Some(sol.iterations),
        });
        let settled = nu_new == nu && rel_change(ell_new, ell) < cfg.ell_tolerance;
        if settled || j >= cfg.max_iterations {
            let hp = Hyperparameters::Isotropic { nu, ell };
            return pb.report(PriorKind::Isotropic, sol, hp, alpha, sel, history, settled, warnings);
        }
        nu = nu_new;
        ell = ell_new;
        fit = next;
    }
}

/// Direction, ratio and lengths of one field; near-isotropic fields get
/// `theta = 0, tau = 1`.
fn fit_geometry(x: &Field, cfg: &AnisotropyConfig) -> Result<(AnisotropicParams, MaternFit)> {
    let est = estimate_anisotropy(x, cfg)?;
    let direction = if est.anisotropic {
        est.estimate
    } else {
        AnisotropyEstimate::from_ratio(0.0, 1.0)?
    };
    let (fit, geo) = fit_anisotropic_lengths(x, &cfg.semivariogram, &direction, &cfg.nu_candidates)?;
    Ok((AnisotropicParams::from_fit(fit.nu, &geo), fit))
}

/// `delta` such that `delta^{-1} P^{-1}` has the fitted partial sill as its
/// marginal variance.
fn prior_scale(prior: &SpdePrecision, fit: &MaternFit) -> Result<f64> {
    Ok(prior.marginal_variance()? / partial_sill(fit))
}

fn partial_sill(fit: &MaternFit) -> f64 {
    let s = fit.sill - fit.nugget;
    if s > 0.0 {
        s
    } else {
        fit.sill
    }
}

/// Anisotropic driver: directional semivariograms give `(theta, tau)`, an
/// isotropized fit gives `(nu, ell1)`, and `ell2 = ell1 / tau`.
pub fn run_anisotropic_pipeline(
    b: &Field,
    model: &ForwardModel,
    truth: Option<&Field>,
    cfg: &PipelineConfig,
) -> Result<SolveReport> {
    let pb = Problem::new(b, model, truth, cfg)?;
    let (mut params, mut fit) = fit_geometry(b, &cfg.variogram)?;
    let mut history = vec![IterationRecord {
        iteration: 0,
        hyperparameters: Hyperparameters::Anisotropic(params),
        alpha: None,
        cg_iterations: None,
    }];
    let mut warnings = Vec::new();
    let mut j = 0;
    loop {
        j += 1;
        pb.extension_warning(params.nu, params.ell1, &mut warnings);
        let prior = SpdePrecision::assemble(&params.spec(cfg.boundary, model)?)?;
        let (sol, alpha, sel) = pb.solve(&prior, prior_scale(&prior, &fit)?)?;
        let (next, next_fit) = fit_geometry(&pb.field(&sol.estimate)?, &cfg.variogram)?;
        history.push(IterationRecord {
            iteration: j,
            hyperparameters: Hyperparameters::Anisotropic(next),
            alpha: Some(alpha),
            cg_iterations: Some(sol.iterations),
        });
        let settled = next.settled(&params, cfg.ell_tolerance);
        if settled || j >= cfg.max_iterations {
            let hp = Hyperparameters::Anisotropic(params);
            return pb.report(PriorKind::Anisotropic, sol, hp, alpha, sel, history, settled, warnings);
        }
        params = next;
        fit = next_fit;
    }
}

fn region_view(x: &Field, labels: &[usize], region: usize) -> Result<Field> {
    let mask: Vec<bool> = x.mask().iter().zip(labels).map(|(&m, &l)| m && l == region).collect();
    x.clone().with_mask(mask)
}

/// Regional driver: the anisotropic fit is run on each region's observed
/// pixels and the blocks are glued by [`RegionalOperator`].
pub fn run_regional_pipeline(
    b: &Field,
    model: &ForwardModel,
    labels: &[usize],
    truth: Option<&Field>,
    cfg: &PipelineConfig,
) -> Result<SolveReport> {
    let pb = Problem::new(b, model, truth, cfg)?;
    if labels.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let fit_all = |x: &Field| -> Result<(Vec<AnisotropicParams>, Vec<MaternFit>)> {
        let fits = (0..k)
            .map(|i| fit_geometry(&region_view(x, labels, i)?, &cfg.variogram))
            .collect::<Result<Vec<_>>>()?;
        Ok(fits.into_iter().unzip())
    };
    let sizes: Vec<f64> = (0..k).map(|i| labels.iter().filter(|&&l| l == i).count() as f64).collect();
    let (mut params, mut fits) = fit_all(b)?;
    let mut history = vec![IterationRecord {
        iteration: 0,
        hyperparameters: Hyperparameters::Regional { regions: params.clone() },
        alpha: None,
        cg_iterations: None,
    }];
    let mut warnings = Vec::new();
    let mut j = 0;
    loop {
        j += 1;
        let specs = params
            .iter()
            .map(|p| {
                pb.extension_warning(p.nu, p.ell1, &mut warnings);
                p.spec(cfg.boundary, model)
            })
            .collect::<Result<Vec<_>>>()?;
        let partition = RegionPartition::from_original_labels(*model.grid(), labels, specs)?;
        let prior = RegionalOperator::build(partition)?;
        for w in prior.warnings() {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        // size-weighted mean of the per-region scales
        let mut scale = 0.0;
        for ((p, f), w) in prior.precisions().iter().zip(&fits).zip(&sizes) {
            scale += w * p.marginal_variance()? / partial_sill(f);
        }
        scale /= labels.len() as f64;
        let (sol, alpha, sel) = pb.solve(&prior, scale)?;
        let (next, next_fits) = fit_all(&pb.field(&sol.estimate)?)?;
        history.push(IterationRecord {
            iteration: j,
            hyperparameters: Hyperparameters::Regional { regions: next.clone() },
            alpha: Some(alpha),
            cg_iterations: Some(sol.iterations),
        });
        let settled = next.iter().zip(&params).all(|(n, p)| n.settled(p, cfg.ell_tolerance));
        if settled || j >= cfg.max_iterations {
            let hp = Hyperparameters::Regional { regions: params };
            return pb.report(PriorKind::Regional, sol, hp, alpha, sel, history, settled, warnings);
        }
        params = next;
        fits = next_fits;
    }
}

/// Identity-precision baseline.
pub fn run_tikhonov(b: &Field, model: &ForwardModel, truth: Option<&Field>, cfg: &PipelineConfig) -> Result<SolveReport> {
    let pb = Problem::new(b, model, truth, cfg)?;
    let prior = IdentityPrecision::new(model.dim());
    let (_, observed) = b.observed_points();
    let noise = match cfg.alpha {
        AlphaMode::KnownNoise { sigma } => sigma * sigma,
        _ => 0.0,
    };
    let signal = (crate::metrics::sample_std(&observed).powi(2) - noise).max(f64::MIN_POSITIVE);
    let (sol, alpha, sel) = pb.solve(&prior, 1.0 / signal)?;
    let history = vec![IterationRecord {
        iteration: 1,
        hyperparameters: Hyperparameters::Tikhonov,
        alpha: Some(alpha),
        cg_iterations: Some(sol.iterations),
    }];
    pb.report(PriorKind::Tikhonov, sol, Hyperparameters::Tikhonov, alpha, sel, history, true, Vec::new())
}

/// Dispatch on `kind`; `labels` is required for the regional prior.
pub fn run_pipeline(
    kind: PriorKind,
    b: &Field,
    model: &ForwardModel,
    labels: Option<&[usize]>,
    truth: Option<&Field>,
    cfg: &PipelineConfig,
) -> Result<SolveReport> {
    match kind {
        PriorKind::Isotropic => run_isotropic_pipeline(b, model, truth, cfg),
        PriorKind::Anisotropic => run_anisotropic_pipeline(b, model, truth, cfg),
        PriorKind::Regional => {
            let labels = labels.ok_or_else(|| Error::InvalidInput("the regional prior needs region labels".into()))?;
            run_regional_pipeline(b, model, labels, truth, cfg)
        }
        PriorKind::Tikhonov => run_tikhonov(b, model, truth, cfg),
    }
}
