//! Sparse Cholesky factorization `P A P^T = L L^T` with a minimum-degree
//! fill-reducing permutation.
//!
//! The numeric phase is the classic up-looking algorithm: row `k` of `L`
//! is found by a sparse triangular solve whose pattern is the reach of
//! `A(0..k, k)` in the elimination tree.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use std::collections::BinaryHeap;
use std::cmp::Reverse;

const NONE: usize = usize::MAX;

/// Minimum-degree ordering on the explicit elimination graph.
///
/// Returns `perm` with `perm[k]` the original index eliminated at step `k`.
/// Ties are broken by the smallest index, so the ordering is deterministic.
pub fn minimum_degree_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let (cols, _) = a.row(i);
            cols.iter().copied().filter(|&j| j != i).collect()
        })
        .collect();
    // symmetrize the pattern in case only one triangle carries an entry
    let mut extra: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for &j in &adj[i] {
            if adj[j].binary_search(&i).is_err() {
                extra[j].push(i);
            }
        }
    }
    for (i, e) in extra.into_iter().enumerate() {
        if !e.is_empty() {
            adj[i].extend(e);
            adj[i].sort_unstable();
            adj[i].dedup();
        }
    }

    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] <- (adj[u] U nbrs) \ {u, v}
            merged.clear();
            let au = &adj[u];
            let (mut p, mut q) = (0, 0);
            while p < au.len() || q < nbrs.len() {
                let next = match (au.get(p), nbrs.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        q += 1;
                        y
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        q += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    perm
}

/// Lower-triangular Cholesky factor of a symmetrically permuted SPD matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    /// Factors `a` after a minimum-degree permutation.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = minimum_degree_ordering(a);
        Self::factor_with_permutation(a, perm)
    }

    /// Factors `a` in its natural ordering.
    pub fn factor_natural(a: &CsrMatrix) -> Result<Self> {
        Self::factor_with_permutation(a, (0..a.n_rows()).collect())
    }

    pub fn factor_with_permutation(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n || perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.n_cols().min(perm.len()),
            });
        }
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        // upper pattern of C = P A P^T, stored by column: col k holds rows i <= k
        let mut upper: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi <= pj {
                upper[pj].push((pi, v));
            }
        }
        for col in &mut upper {
            col.sort_unstable_by_key(|e| e.0);
        }

        let parent = elimination_tree(&upper);

        // column counts by walking each row's reach once
        let mut counts = vec![1usize; n];
        let mut mark = vec![NONE; n];
        let mut stack = Vec::with_capacity(n);
        for k in 0..n {
            ereach(&upper[k], k, &parent, &mut mark, &mut stack);
            for &i in &stack {
                counts[i] += 1;
            }
        }
        let mut colptr = vec![0; n + 1];
        for k in 0..n {
            colptr[k + 1] = colptr[k] + counts[k];
        }
        let nnz = colptr[n];
        let mut rowind = vec![0; nnz];
        let mut values = vec![0.0; nnz];
        let mut next = colptr.clone();
        let mut x = vec![0.0; n];
        mark.iter_mut().for_each(|m| *m = NONE);

        for k in 0..n {
            ereach(&upper[k], k, &parent, &mut mark, &mut stack);
            for &(i, v) in &upper[k] {
                x[i] += v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in stack.iter() {
                let lki = x[i] / values[colptr[i]];
                x[i] = 0.0;
                for p in colptr[i] + 1..next[i] {
                    x[rowind[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                rowind[p] = k;
                values[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "non-positive pivot {d:.3e} at step {k} of {n}"
                )));
            }
            let p = next[k];
            next[k] += 1;
            rowind[p] = k;
            values[p] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            colptr,
            rowind,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L`.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_lower(&mut y);
        self.solve_upper(&mut y);
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = y[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `L y = b` in the permuted ordering.
    pub fn solve_lower(&self, y: &mut [f64]) {
        for j in 0..self.n {
            let start = self.colptr[j];
            y[j] /= self.values[start];
            let yj = y[j];
            for p in start + 1..self.colptr[j + 1] {
                y[self.rowind[p]] -= self.values[p] * yj;
            }
        }
    }

    /// `L^T x = y` in the permuted ordering.
    pub fn solve_upper(&self, y: &mut [f64]) {
        for j in (0..self.n).rev() {
            let start = self.colptr[j];
            let mut s = y[j];
            for p in start + 1..self.colptr[j + 1] {
                s -= self.values[p] * y[self.rowind[p]];
            }
            y[j] = s / self.values[start];
        }
    }

    /// The factor `L` as a CSR matrix in the permuted ordering.
    pub fn lower_factor(&self) -> CsrMatrix {
        let trip = (0..self.n).flat_map(|j| {
            (self.colptr[j]..self.colptr[j + 1]).map(move |p| (self.rowind[p], j, self.values[p]))
        });
        CsrMatrix::from_triplets(self.n, self.n, trip)
    }
}

fn elimination_tree(upper: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = upper.len();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &(start, _) in &upper[k] {
            let mut i = start;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Pattern of row `k` of `L` (excluding the diagonal), sorted by column.
///
/// Since `parent[i] > i`, increasing column order is a valid topological order
/// for the up-looking solve.
fn ereach(col: &[(usize, f64)], k: usize, parent: &[usize], mark: &mut [usize], out: &mut Vec<usize>) {
    out.clear();
    mark[k] = k;
    for &(start, _) in col {
        if start >= k {
            continue;
        }
        let mut i = start;
        while i != NONE && mark[i] != k {
            out.push(i);
            mark[i] = k;
            i = parent[i];
        }
    }
    out.sort_unstable();
}
