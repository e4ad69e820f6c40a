//! Matrix-free operator interfaces shared by the priors and the solvers.

/// A symmetric linear operator on `R^dim`.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// `y <- A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

/// A prior precision operator on the extended grid.
pub trait PrecisionOperator: LinearOperator {
    /// Eigenvalues on the 2-D DFT grid when the operator is circulant.
    fn circulant_symbol(&self) -> Option<&[f64]> {
        None
    }

    /// Diagonal entries, used for Jacobi preconditioning.
    fn diagonal(&self) -> Vec<f64>;

    /// Region labels and per-region circulant symbols, for block-structured
    /// operators whose blocks are all circulant.
    fn block_symbols(&self) -> Option<(&[usize], Vec<&[f64]>)> {
        None
    }
}

/// Identity precision (Tikhonov regularization).
#[derive(Debug, Clone)]
pub struct IdentityPrecision {
    dim: usize,
    symbol: Vec<f64>,
}

impl IdentityPrecision {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            symbol: vec![1.0; dim],
        }
    }
}

impl LinearOperator for IdentityPrecision {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

impl PrecisionOperator for IdentityPrecision {
    fn circulant_symbol(&self) -> Option<&[f64]> {
        Some(&self.symbol)
    }

    fn diagonal(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest Ritz value after `steps` Lanczos iterations with full
/// reorthogonalization, from a fixed pseudo-random start vector.
pub fn lanczos_min_ritz(op: &dyn LinearOperator, steps: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let n = op.dim();
    let steps = steps.min(n).max(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut w = vec![0.0; n];
    for k in 0..steps {
        op.apply(&basis[k], &mut w);
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        for b in &basis {
            let c = dot(&w, b);
            w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
        }
        let bn = norm(&w);
        if k + 1 == steps || bn <= 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(bn);
        basis.push(w.iter().map(|v| v / bn).collect());
    }
    let m = alpha.len();
    let t = nalgebra::DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    t.symmetric_eigenvalues().min()
}
