//! Regularization parameter selection: generalized cross validation with an
//! exact or stochastic trace, and the truth-correlation oracle.

use super::forward::ForwardModel;
use super::map::{map_estimate_from, solve_normal_equations, SolverOptions};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::operator::PrecisionOperator;
use crate::optim::golden_section;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Problems with at most this many unknowns use the exact trace under
/// [`TraceMethod::Auto`].
pub const EXACT_TRACE_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochasticTrace {
    pub initial_probes: usize,
    pub batch: usize,
    pub max_probes: usize,
    /// Probes are added until the standard error of the trace estimate is
    /// below this fraction of the estimate.
    pub relative_se: f64,
    pub seed: u64,
}

impl Default for StochasticTrace {
    fn default() -> Self {
        Self {
            initial_probes: 20,
            batch: 20,
            max_probes: 400,
            relative_se: 0.0075,
            seed: 0x6c76,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum TraceMethod {
    Auto(StochasticTrace),
    Exact,
    Stochastic(StochasticTrace),
}

impl Default for TraceMethod {
    fn default() -> Self {
        TraceMethod::Auto(StochasticTrace::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcvPoint {
    pub alpha: f64,
    pub residual_norm_sq: f64,
    /// `tr(I - A H^{-1} A^T)`.
    pub trace: f64,
    pub trace_standard_error: f64,
    pub probes: usize,
    pub value: f64,
}

/// Exact GCV through the generalized eigenproblem `A^T A v = lambda P v`.
struct DenseGcv {
    lambda: Vec<f64>,
    /// `V^T L^{-1} A^T b`.
    w: Vec<f64>,
    /// `A L^{-T} V`.
    g: DMatrix<f64>,
    b: DVector<f64>,
}

impl DenseGcv {
    fn new(model: &ForwardModel, prior: &dyn PrecisionOperator, b: &[f64]) -> Result<Self> {
        let n = model.dim();
        let m = model.data_len();
        let mut a = DMatrix::<f64>::zeros(m, n);
        let mut p = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            a.set_column(j, &DVector::from_vec(model.apply(&e)));
            p.set_column(j, &DVector::from_vec(prior.apply_vec(&e)));
            e[j] = 0.0;
        }
        let p = (&p + p.transpose()) * 0.5;
        let l = p
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("dense prior precision".into()))?
            .l();
        // C = L^{-1} A^T A L^{-T}
        let at = a.transpose();
        let linv_at = l
            .solve_lower_triangular(&at)
            .ok_or_else(|| Error::NonFinite("triangular solve".into()))?;
        let c = &linv_at * linv_at.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let v = eig.eigenvectors;
        let bv = DVector::from_column_slice(b);
        let w = v.transpose() * (&linv_at * &bv);
        let g = linv_at.transpose() * &v;
        Ok(Self {
            lambda: eig.eigenvalues.iter().map(|&x| x.max(0.0)).collect(),
            w: w.iter().cloned().collect(),
            g,
            b: bv,
        })
    }

    fn evaluate(&self, alpha: f64) -> GcvPoint {
        let coef = DVector::from_iterator(
            self.lambda.len(),
            self.lambda.iter().zip(&self.w).map(|(l, w)| w / (l + alpha)),
        );
        let r = &self.g * coef - &self.b;
        let residual_norm_sq = r.norm_squared();
        let s: f64 = self.lambda.iter().map(|l| l / (l + alpha)).sum();
        let trace = self.b.len() as f64 - s;
        GcvPoint {
            alpha,
            residual_norm_sq,
            trace,
            trace_standard_error: 0.0,
            probes: 0,
            value: residual_norm_sq / (trace * trace),
        }
    }
}

/// Solutions keyed by alpha; the closest one in `log alpha` seeds the next solve.
#[derive(Default)]
struct WarmStarts {
    solutions: Vec<(f64, Vec<f64>)>,
}

impl WarmStarts {
    fn nearest(&self, alpha: f64) -> Option<&[f64]> {
        self.solutions
            .iter()
            .min_by(|a, b| (a.0 / alpha).ln().abs().total_cmp(&(b.0 / alpha).ln().abs()))
            .map(|(_, x)| x.as_slice())
    }

    fn insert(&mut self, alpha: f64, x: Vec<f64>) {
        self.solutions.push((alpha, x));
    }
}

/// GCV objective `||A x_alpha - b||^2 / tr(I - A H^{-1} A^T)^2`.
pub struct GcvEvaluator<'a> {
    model: &'a ForwardModel,
    prior: &'a dyn PrecisionOperator,
    b: &'a [f64],
    opts: SolverOptions,
    dense: Option<DenseGcv>,
    stochastic: StochasticTrace,
    probes: Vec<Vec<f64>>,
    /// Latest solve per right-hand side (data first, then probes).
    last: Vec<Option<Vec<f64>>>,
}

impl<'a> GcvEvaluator<'a> {
    pub fn new(
        model: &'a ForwardModel,
        prior: &'a dyn PrecisionOperator,
        b: &'a [f64],
        method: &TraceMethod,
        opts: &SolverOptions,
    ) -> Result<Self> {
        let (exact, stochastic) = match *method {
            TraceMethod::Exact => (true, StochasticTrace::default()),
            TraceMethod::Auto(s) => (model.dim() <= EXACT_TRACE_LIMIT, s),
            TraceMethod::Stochastic(s) => (false, s),
        };
        if b.len() != model.data_len() {
            return Err(Error::DimensionMismatch {
                expected: model.data_len(),
                got: b.len(),
            });
        }
        Ok(Self {
            model,
            prior,
            b,
            opts: *opts,
            dense: if exact { Some(DenseGcv::new(model, prior, b)?) } else { None },
            stochastic,
            probes: Vec::new(),
            last: Vec::new(),
        })
    }

    pub fn is_exact(&self) -> bool {
        self.dense.is_some()
    }

    /// `A^T z` for the `k`-th Rademacher probe; probes are shared across `alpha`.
    fn probe(&mut self, k: usize) -> &[f64] {
        while self.probes.len() <= k {
            let mut rng = ChaCha8Rng::seed_from_u64(self.stochastic.seed);
            rng.set_stream(self.probes.len() as u64);
            let z: Vec<f64> = (0..self.model.data_len())
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            self.probes.push(self.model.adjoint(&z));
        }
        &self.probes[k]
    }

    pub fn evaluate(&mut self, alpha: f64) -> Result<GcvPoint> {
        if let Some(d) = &self.dense {
            return Ok(d.evaluate(alpha));
        }
        if self.last.is_empty() {
            self.last.push(None);
        }
        let sol = map_estimate_from(self.model, self.prior, self.b, alpha, &self.opts, self.last[0].as_deref())?;
        let ax = self.model.apply(&sol.extended);
        self.last[0] = Some(sol.extended);
        let residual_norm_sq: f64 = ax.iter().zip(self.b).map(|(u, v)| (u - v).powi(2)).sum();
        let m = self.model.data_len() as f64;
        let st = self.stochastic;
        let mut samples: Vec<f64> = Vec::new();
        let mut target = st.initial_probes.max(2);
        loop {
            while samples.len() < target {
                let k = samples.len();
                let atz = self.probe(k).to_vec();
                if self.last.len() <= k + 1 {
                    self.last.resize(k + 2, None);
                }
                let (y, _, _) =
                    solve_normal_equations(self.model, self.prior, &atz, alpha, &self.opts, self.last[k + 1].as_deref())?;
                let q: f64 = atz.iter().zip(&y).map(|(u, v)| u * v).sum();
                samples.push(m - q);
                self.last[k + 1] = Some(y);
            }
            let k = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / k;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
            let se = (var / k).sqrt();
            if se <= st.relative_se * mean.abs() || samples.len() >= st.max_probes {
                return Ok(GcvPoint {
                    alpha,
                    residual_norm_sq,
                    trace: mean,
                    trace_standard_error: se,
                    probes: samples.len(),
                    value: residual_norm_sq / (mean * mean),
                });
            }
            target = (samples.len() + st.batch.max(1)).min(st.max_probes);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Golden-section refinement around the best grid point.
    pub refine: bool,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self {
            min: 1e-8,
            max: 1e2,
            points: 21,
            refine: true,
        }
    }
}

impl AlphaGrid {
    pub fn values(&self) -> Vec<f64> {
        let (lo, hi) = (self.min.log10(), self.max.log10());
        let k = self.points.max(2);
        (0..k).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (k - 1) as f64)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.max > self.min && self.points >= 2) {
            return Err(Error::InvalidInput(format!("invalid alpha grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub objective: f64,
    /// `(alpha, objective)` for every evaluation, grid first.
    pub evaluations: Vec<(f64, f64)>,
}

/// Minimizes `f` over the logarithmic grid, then refines by golden section
/// between the neighbours of the best grid point.
pub fn minimize_over_grid<F: FnMut(f64) -> Result<f64>>(f: F, grid: &AlphaGrid) -> Result<AlphaSelection> {
    minimize_over_grid_with_plateau(f, grid, 0.0)
}

/// Oracle objectives within this of the best count as ties.
pub const ORACLE_PLATEAU: f64 = 1e-4;

/// As [`minimize_over_grid`], but the grid point chosen is the largest alpha
/// whose value is within `plateau` of the minimum; refinement only accepts
/// improvements beyond `plateau`.
pub fn minimize_over_grid_with_plateau<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    grid: &AlphaGrid,
    plateau: f64,
) -> Result<AlphaSelection> {
    grid.validate()?;
    let alphas = grid.values();
    // descending order lets warm-started solvers move from easy to hard systems
    let mut evaluations = vec![(0.0, 0.0); alphas.len()];
    for (i, &a) in alphas.iter().enumerate().rev() {
        evaluations[i] = (a, f(a)?);
    }
    let fmin = (0..alphas.len())
        .map(|i| evaluations[i].1)
        .filter(|v| v.is_finite())
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::NonFinite("objective is non-finite on the whole alpha grid".into()))?;
    let best = (0..alphas.len())
        .filter(|&i| evaluations[i].1.is_finite() && evaluations[i].1 <= fmin + plateau)
        .max_by(|&i, &j| alphas[i].total_cmp(&alphas[j]))
        .expect("minimum is attained");
    let (mut alpha, mut objective) = evaluations[best];
    if grid.refine {
        let lo = alphas[best.saturating_sub(1)].log10();
        let hi = alphas[(best + 1).min(alphas.len() - 1)].log10();
        let mut err = None;
        let (t, v) = golden_section(
            |t| match f(10f64.powf(t)) {
                Ok(v) => {
                    evaluations.push((10f64.powf(t), v));
                    if v.is_finite() {
                        v
                    } else {
                        f64::INFINITY
                    }
                }
                Err(e) => {
                    err.get_or_insert(e);
                    f64::INFINITY
                }
            },
            lo,
            hi,
            0.02,
            20,
        );
        if let Some(e) = err {
            return Err(e);
        }
        if v < objective - plateau {
            alpha = 10f64.powf(t);
            objective = v;
        }
    }
    Ok(AlphaSelection {
        alpha,
        objective,
        evaluations,
    })
}

pub fn gcv_alpha(
    model: &ForwardModel,
    prior: &dyn PrecisionOperator,
    b: &[f64],
    grid: &AlphaGrid,
    trace: &TraceMethod,
    opts: &SolverOptions,
) -> Result<AlphaSelection> {
    let mut ev = GcvEvaluator::new(model, prior, b, trace, opts)?;
    minimize_over_grid(|a| Ok(ev.evaluate(a)?.value), grid)
}

/// Alpha maximizing the correlation between the restricted MAP estimate and
/// `truth` (original-domain values); `objective` is the negated correlation.
pub fn oracle_alpha(
    model: &ForwardModel,
    prior: &dyn PrecisionOperator,
    b: &[f64],
    truth: &[f64],
    grid: &AlphaGrid,
    opts: &SolverOptions,
) -> Result<AlphaSelection> {
    if truth.len() != model.grid().original_len() {
        return Err(Error::DimensionMismatch {
            expected: model.grid().original_len(),
            got: truth.len(),
        });
    }
    let mut warm = WarmStarts::default();
    minimize_over_grid_with_plateau(
        |a| {
            let s = map_estimate_from(model, prior, b, a, opts, warm.nearest(a))?;
            let rho = pearson(&s.estimate, truth);
            warm.insert(a, s.extended);
            Ok(-rho)
        },
        grid,
        ORACLE_PLATEAU,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::operator::IdentityPrecision;
    use crate::solver::cg::CgOptions;
    use crate::solver::forward::BlurKernel;
    use crate::spde::{Boundary, PrecisionSpec, SpdePrecision};

    fn toy() -> (ForwardModel, SpdePrecision, Vec<f64>) {
        let grid = Grid2D::new(8, 1.25).unwrap();
        let mask: Vec<bool> = (0..64).map(|i| (i * 37) % 5 != 0).collect();
        let model = ForwardModel::new(grid, mask, BlurKernel::standard()).unwrap();
        let prior = SpdePrecision::assemble(&PrecisionSpec::isotropic(1.0, 0.1, Boundary::Periodic, grid).unwrap())
            .unwrap();
        let b: Vec<f64> = (0..model.data_len()).map(|i| (i as f64 * 0.21).sin() + 0.1 * (i as f64 * 3.1).cos()).collect();
        (model, prior, b)
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            cg: CgOptions { tol: 1e-11, max_iter: 20_000 },
            ..Default::default()
        }
    }

    #[test]
    fn exact_trace_matches_brute_force() {
        let (model, prior, b) = toy();
        let mut ev = GcvEvaluator::new(&model, &prior, &b, &TraceMethod::Exact, &tight()).unwrap();
        let alpha = 3e-3;
        let pt = ev.evaluate(alpha).unwrap();
        // brute force: column-by-column CG solves
        let m = model.data_len();
        let mut tr = 0.0;
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let (y, _, _) = solve_normal_equations(&model, &prior, &model.adjoint(&e), alpha, &tight(), None).unwrap();
            tr += model.apply(&y)[j];
        }
        assert!((pt.trace - (m as f64 - tr)).abs() < 1e-7 * m as f64);
        let x = map_estimate_from(&model, &prior, &b, alpha, &tight(), None).unwrap();
        let r: f64 = model.apply(&x.extended).iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum();
        assert!((pt.residual_norm_sq - r).abs() < 1e-7 * r);
    }

    #[test]
    fn stochastic_trace_tracks_exact() {
        let (model, prior, b) = toy();
        let mut ex = GcvEvaluator::new(&model, &prior, &b, &TraceMethod::Exact, &tight()).unwrap();
        let mut st = GcvEvaluator::new(
            &model,
            &prior,
            &b,
            &TraceMethod::Stochastic(StochasticTrace::default()),
            &tight(),
        )
        .unwrap();
        for a in [1e-6, 1e-3, 1e-1] {
            let (e, s) = (ex.evaluate(a).unwrap(), st.evaluate(a).unwrap());
            assert!((s.value / e.value - 1.0).abs() < 0.1, "{a}: {} vs {}", s.value, e.value);
            assert!(s.probes >= 20);
        }
    }

    #[test]
    fn argmin_is_invariant_to_data_scale() {
        let (model, prior, b) = toy();
        let grid = AlphaGrid::default();
        let s1 = gcv_alpha(&model, &prior, &b, &grid, &TraceMethod::Exact, &tight()).unwrap();
        let b3: Vec<f64> = b.iter().map(|v| 3.0 * v).collect();
        let s3 = gcv_alpha(&model, &prior, &b3, &grid, &TraceMethod::Exact, &tight()).unwrap();
        assert!((s1.alpha / s3.alpha - 1.0).abs() < 1e-6);
    }

    #[test]
    fn oracle_picks_largest_alpha_on_the_plateau() {
        let grid = Grid2D::unextended(8).unwrap();
        let model = ForwardModel::new(grid, (0..64).map(|i| i % 4 != 0).collect(), BlurKernel::None).unwrap();
        let prior = IdentityPrecision::new(64);
        let truth: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let field = crate::field::Field::square(8, truth.clone()).unwrap();
        let b = model.data_from_field(&field).unwrap();
        let g = AlphaGrid {
            refine: false,
            ..Default::default()
        };
        let sel = oracle_alpha(&model, &prior, &b, &truth, &g, &SolverOptions::default()).unwrap();
        let best = sel.evaluations.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        assert!(sel.objective <= best + ORACLE_PLATEAU);
        let larger_ties = sel
            .evaluations
            .iter()
            .filter(|e| e.0 > sel.alpha && e.1 <= best + ORACLE_PLATEAU)
            .count();
        assert_eq!(larger_ties, 0);
    }

    #[test]
    fn grid_is_logarithmic() {
        let v = AlphaGrid::default().values();
        assert_eq!(v.len(), 21);
        assert!((v[0] - 1e-8).abs() < 1e-20 && (v[20] - 1e2).abs() < 1e-10);
        assert!((v[1] / v[0] - 10f64.powf(0.5)).abs() < 1e-9);
    }

    #[test]
    fn plateau_prefers_largest_alpha() {
        // flat below 1e-4, rising above
        let f = |a: f64| Ok(if a <= 1e-4 { -1.0 - 1e-6 * (1e-4 - a) } else { -1.0 + (a.log10() + 4.0) });
        let grid = AlphaGrid {
            refine: false,
            ..Default::default()
        };
        let strict = minimize_over_grid(f, &grid).unwrap();
        assert!((strict.alpha - 1e-8).abs() < 1e-20);
        let flat = minimize_over_grid_with_plateau(f, &grid, 1e-4).unwrap();
        assert!((flat.alpha - 1e-4).abs() < 1e-12);
    }
}
