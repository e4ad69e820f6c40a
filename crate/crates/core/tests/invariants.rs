//! Cross-module properties checked through the public API.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wmprior::metrics::pearson;
use wmprior::operator::LinearOperator;
use wmprior::regional::{RegionPartition, RegionalOperator};
use wmprior::semivariogram::empirical_semivariogram;
use wmprior::solver::benchmark::{observe_extended, prior_draw, ObservationSpec};
use wmprior::solver::map::NormalOperator;
use wmprior::solver::{map_estimate, BlurKernel, CgOptions, ForwardModel, SolverOptions};
use wmprior::spde::{sample_prior, validate_connection, Boundary, PrecisionSpec, SpdePrecision};
use wmprior::{Field, Grid2D};

fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn regional(n: usize, labels: &[usize], k: usize) -> RegionalOperator {
    let grid = Grid2D::new(n, 1.0).unwrap();
    let specs: Vec<PrecisionSpec> = (0..k)
        .map(|i| {
            let t = 0.4 * i as f64 - 0.6;
            PrecisionSpec::anisotropic(1.0, t, 0.2 + 0.05 * i as f64, 0.08, Boundary::Periodic, grid).unwrap()
        })
        .collect();
    RegionalOperator::build(RegionPartition::from_original_labels(grid, labels, specs).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_model_adjoint(seed in 0u64..1000, n in 4usize..12, a in 1.0f64..1.8, std in 0.0f64..2.0) {
        let grid = Grid2D::new(n, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = randn(n * n, &mut rng).iter().map(|v| *v > -0.3).collect();
        prop_assume!(mask.iter().any(|&m| m));
        let blur = if std > 0.2 { BlurKernel::Gaussian { std, size: 5 } } else { BlurKernel::None };
        let model = ForwardModel::new(grid, mask, blur).unwrap();
        let x = randn(model.dim(), &mut rng);
        let y = randn(model.data_len(), &mut rng);
        let lhs = dot(&model.apply(&x), &y);
        let rhs = dot(&x, &model.adjoint(&y));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (lhs.abs() + rhs.abs() + 1.0));
    }

    #[test]
    fn regional_operator_is_symmetric_positive_and_local(seed in 0u64..1000, k in 1usize..4) {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..n * n).map(|p| p % k).collect();
        for (i, l) in labels.iter_mut().enumerate() {
            if randn(1, &mut rng)[0] > 0.5 {
                *l = (i / n) % k;
            }
        }
        let op = regional(n, &labels, k);
        let (x, y) = (randn(n * n, &mut rng), randn(n * n, &mut rng));
        let (px, py) = (op.apply_vec(&x), op.apply_vec(&y));
        let scale = dot(&x, &x).sqrt() * dot(&py, &py).sqrt();
        prop_assert!((dot(&px, &y) - dot(&x, &py)).abs() <= 1e-9 * scale);
        prop_assert!(dot(&x, &px) > 0.0);
        // changing values outside region 0 leaves region 0 of P x untouched
        let mut z = x.clone();
        for (i, v) in z.iter_mut().enumerate() {
            if labels[i] != 0 {
                *v += 3.0;
            }
        }
        let pz = op.apply_vec(&z);
        for i in (0..n * n).filter(|&i| labels[i] == 0) {
            prop_assert!((pz[i] - px[i]).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn map_estimate_satisfies_normal_equations(seed in 0u64..1000, log_alpha in -5.0f64..1.0) {
        let n = 10;
        let grid = Grid2D::new(n, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = randn(n * n, &mut rng).iter().map(|v| *v > -0.2).collect();
        prop_assume!(mask.iter().any(|&m| m));
        let model = ForwardModel::new(grid, mask, BlurKernel::Gaussian { std: 1.0, size: 5 }).unwrap();
        let prior = SpdePrecision::assemble(&PrecisionSpec::isotropic(1.0, 0.15, Boundary::Periodic, grid).unwrap()).unwrap();
        let b = randn(model.data_len(), &mut rng);
        let alpha = 10f64.powf(log_alpha);
        let tol = 1e-8;
        let opts = SolverOptions { cg: CgOptions { tol, max_iter: 20_000 }, ..Default::default() };
        let x = map_estimate(&model, &prior, &b, alpha, &opts).unwrap().extended;
        let op = NormalOperator { model: &model, prior: &prior, alpha };
        let rhs = model.adjoint(&b);
        let r: Vec<f64> = op.apply_vec(&x).iter().zip(&rhs).map(|(u, v)| u - v).collect();
        prop_assert!(dot(&r, &r).sqrt() <= 10.0 * tol * dot(&rhs, &rhs).sqrt());
    }
}

#[test]
fn semivariogram_matches_brute_force_and_covariance_identity() {
    let n = 24;
    let grid = Grid2D::new(n, 1.5).unwrap();
    let spec = PrecisionSpec::isotropic(1.0, 0.08, Boundary::Periodic, grid).unwrap();
    let z = grid.restrict(&prior_draw(&spec, 2).unwrap());
    let field = Field::square(n, z.clone()).unwrap();
    let (max_lag, bins) = (0.2, 8);
    let sv = empirical_semivariogram(&field, max_lag, bins).unwrap();

    let s = field.spacing();
    let width = max_lag / bins as f64;
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
    let mut sq = vec![0.0; bins];
    let mut cov = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for a in 0..n * n {
        for b in a + 1..n * n {
            let (dx, dy) = ((b % n) as f64 - (a % n) as f64, (b / n) as f64 - (a / n) as f64);
            let d = (dx * s).hypot(dy * s);
            if d > max_lag {
                continue;
            }
            let k = ((d / width).ceil() as usize).clamp(1, bins) - 1;
            sq[k] += (z[a] - z[b]).powi(2);
            cov[k] += (z[a] - mean) * (z[b] - mean);
            cnt[k] += 1;
        }
    }
    let filled: Vec<usize> = (0..bins).filter(|&k| cnt[k] > 0).collect();
    assert_eq!(filled.len(), sv.bins.len());
    for (bin, &k) in sv.bins.iter().zip(&filled) {
        assert_eq!(bin.pairs, cnt[k]);
        let gamma = sq[k] / (2.0 * cnt[k] as f64);
        assert!((bin.gamma - gamma).abs() <= 1e-12 * gamma);
        let c = cov[k] / cnt[k] as f64;
        assert!(((bin.gamma + c) / var - 1.0).abs() < 0.15, "lag {}: {} + {} vs {var}", bin.lag, bin.gamma, c);
    }
}

#[test]
fn periodic_samples_are_translation_invariant() {
    let n = 12;
    let grid = Grid2D::new(n, 1.0).unwrap();
    let spec = PrecisionSpec::isotropic(1.0, 0.1, Boundary::Periodic, grid).unwrap();
    let draws = sample_prior(&spec, 6000, 4).unwrap();
    let corr = |p: usize, q: usize| {
        let a: Vec<f64> = draws.iter().map(|d| d[p]).collect();
        let b: Vec<f64> = draws.iter().map(|d| d[q]).collect();
        pearson(&a, &b)
    };
    let at = |x: usize, y: usize| y * n + x;
    for (dx, dy) in [(1, 0), (2, 1), (0, 3)] {
        let base = corr(at(0, 0), at(dx, dy));
        for (x, y) in [(5, 7), (9, 2), (11, 11)] {
            let c = corr(at(x, y), at((x + dx) % n, (y + dy) % n));
            assert!((c - base).abs() < 0.05, "lag ({dx},{dy}) at ({x},{y}): {c} vs {base}");
        }
    }
}

#[test]
fn connection_error_falls_with_extension() {
    let errors: Vec<f64> = [1.0, 1.25, 1.5]
        .iter()
        .map(|&a| {
            let grid = Grid2D::new(16, a).unwrap();
            let spec = PrecisionSpec::isotropic(1.0, 0.25, Boundary::Periodic, grid).unwrap();
            validate_connection(&spec, 8000, 1).unwrap().relative_error
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn halving_noise_does_not_hurt_reconstruction() {
    let n = 32;
    let grid = Grid2D::new(n, 1.5).unwrap();
    let spec = PrecisionSpec::isotropic(1.0, 0.05, Boundary::Periodic, grid).unwrap();
    let prior = SpdePrecision::assemble(&spec).unwrap();
    let opts = SolverOptions::default();
    let (mut loud, mut quiet) = (0.0, 0.0);
    for seed in 0..5 {
        let x = prior_draw(&spec, seed).unwrap();
        for (noise, acc) in [(0.2, &mut loud), (0.1, &mut quiet)] {
            let obs = ObservationSpec {
                blur: BlurKernel::standard(),
                mask_fraction: 0.4,
                noise_level: noise,
                seed: 50 + seed,
            };
            let (data, truth) = observe_extended(grid, &x, &obs).unwrap();
            let model = ForwardModel::new(grid, data.mask().to_vec(), obs.blur).unwrap();
            let b = model.data_from_field(&data).unwrap();
            let est = map_estimate(&model, &prior, &b, 1e-3, &opts).unwrap().estimate;
            *acc += pearson(&est, truth.values()) / 5.0;
        }
    }
    assert!(quiet >= loud, "quiet {quiet} vs loud {loud}");
}
