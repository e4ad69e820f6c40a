//! Regional priors: independent Whittle-Matérn blocks glued by region masks.
//!
//! With region indicators `D_i` and per-region precisions `P_i`, the
//! covariance `sum_i D_i P_i^{-1} D_i` has the sparse-friendly inverse
//! `sum_i D_i (P_i - P_i Q_i^+ P_i) D_i`, where `Q_i` is `P_i` restricted to the
//! complement of region `i`. Each restricted block is factored once.

use crate::cholesky::SparseCholesky;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::operator::{LinearOperator, PrecisionOperator};
use crate::spde::{PrecisionSpec, SpdePrecision};

/// Disjoint labelling of the extended grid into `k` regions.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    grid: Grid2D,
    labels: Vec<usize>,
    specs: Vec<PrecisionSpec>,
}

impl RegionPartition {
    /// Labels `0..k` on the original `n x n` grid; extended pixels take the
    /// label of the nearest original pixel.
    pub fn from_original_labels(grid: Grid2D, labels: &[usize], specs: Vec<PrecisionSpec>) -> Result<Self> {
        if labels.len() != grid.original_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.original_len(),
                got: labels.len(),
            });
        }
        let m = grid.extended_n();
        let n = grid.n();
        let mut ext = Vec::with_capacity(grid.extended_len());
        for ey in 0..m {
            for ex in 0..m {
                let (ix, iy) = grid.nearest_original(ex, ey);
                ext.push(labels[iy * n + ix]);
            }
        }
        Self::from_extended_labels(grid, ext, specs)
    }

    pub fn from_extended_labels(grid: Grid2D, labels: Vec<usize>, specs: Vec<PrecisionSpec>) -> Result<Self> {
        if labels.len() != grid.extended_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.extended_len(),
                got: labels.len(),
            });
        }
        let k = specs.len();
        if k == 0 {
            return Err(Error::InvalidInput("a partition needs at least one region".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidInput(format!("label {bad} has no prior ({k} regions)")));
        }
        for i in 0..k {
            if !labels.contains(&i) {
                return Err(Error::InvalidInput(format!("region {i} is empty")));
            }
            if specs[i].grid != grid {
                return Err(Error::InvalidInput(format!("region {i} prior is on a different grid")));
            }
        }
        Ok(Self { grid, labels, specs })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.specs.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn specs(&self) -> &[PrecisionSpec] {
        &self.specs
    }

    /// `r_i`, the number of pixels in region `i`.
    pub fn region_size(&self, i: usize) -> usize {
        self.labels.iter().filter(|&&l| l == i).count()
    }

    /// Indices outside region `i` (the support of `(I - D_i) P_i (I - D_i)`).
    pub fn complement(&self, i: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&j| self.labels[j] != i).collect()
    }
}

#[derive(Debug, Clone)]
struct RegionFactor {
    ind: Vec<usize>,
    chol: SparseCholesky,
}

/// Matrix-free regional precision.
#[derive(Debug, Clone)]
pub struct RegionalOperator {
    partition: RegionPartition,
    precisions: Vec<SpdePrecision>,
    factors: Vec<Option<RegionFactor>>,
    warnings: Vec<String>,
}

impl RegionalOperator {
    pub fn build(partition: RegionPartition) -> Result<Self> {
        let n_total = partition.grid.extended_len();
        let mut precisions = Vec::with_capacity(partition.k());
        let mut factors = Vec::with_capacity(partition.k());
        let mut warnings = Vec::new();
        for (i, spec) in partition.specs.iter().enumerate() {
            let p = SpdePrecision::assemble(spec)?;
            let ind = partition.complement(i);
            debug_assert_eq!(ind.len(), n_total - partition.region_size(i));
            if ind.len() * 2 > n_total {
                warnings.push(format!(
                    "region {i} covers {} of {n_total} pixels; its complement factor is large",
                    n_total - ind.len()
                ));
            }
            let factor = if ind.is_empty() {
                None
            } else {
                let sub = p.matrix().principal_submatrix(&ind);
                let chol = SparseCholesky::factor(&sub).map_err(|e| Error::RegionCholesky {
                    region: i,
                    reason: e.to_string(),
                })?;
                Some(RegionFactor { ind, chol })
            };
            precisions.push(p);
            factors.push(factor);
        }
        Ok(Self {
            partition,
            precisions,
            factors,
            warnings,
        })
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }

    pub fn precisions(&self) -> &[SpdePrecision] {
        &self.precisions
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Size of the factored block of region `i` (`N - r_i`).
    pub fn factor_dim(&self, i: usize) -> usize {
        self.factors[i].as_ref().map_or(0, |f| f.ind.len())
    }

    /// `sum_i D_i (P_i D_i x - P_i z_i)` with `z_i = Q_i^+ P_i D_i x`.
    fn apply_regions(&self, x: &[f64], out: &mut [f64]) {
        let labels = &self.partition.labels;
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut dx = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut w = vec![0.0; n];
        for (i, p) in self.precisions.iter().enumerate() {
            // 1: y_i = P_i D_i x
            for (j, d) in dx.iter_mut().enumerate() {
                *d = if labels[j] == i { x[j] } else { 0.0 };
            }
            p.matrix().matvec(&dx, &mut y);
            if let Some(f) = &self.factors[i] {
                // 2-4: gather, triangular solves, scatter
                let mut g: Vec<f64> = f.ind.iter().map(|&j| y[j]).collect();
                f.chol.solve_in_place(&mut g);
                dx.iter_mut().for_each(|v| *v = 0.0);
                for (&j, v) in f.ind.iter().zip(&g) {
                    dx[j] = *v;
                }
                // 5: P_i z_i
                p.matrix().matvec(&dx, &mut w);
            } else {
                w.iter_mut().for_each(|v| *v = 0.0);
            }
            // 6: accumulate on region i
            for j in 0..n {
                if labels[j] == i {
                    out[j] += y[j] - w[j];
                }
            }
        }
    }
}

impl LinearOperator for RegionalOperator {
    fn dim(&self) -> usize {
        self.partition.grid.extended_len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "regional apply: dimension mismatch");
        self.apply_regions(x, y)
    }
}

impl PrecisionOperator for RegionalOperator {
    /// `diag(P_i)` on each region: an upper bound on the exact diagonal.
    fn diagonal(&self) -> Vec<f64> {
        let labels = &self.partition.labels;
        let diags: Vec<Vec<f64>> = self.precisions.iter().map(|p| p.matrix().diagonal()).collect();
        labels.iter().enumerate().map(|(j, &l)| diags[l][j]).collect()
    }

    fn block_symbols(&self) -> Option<(&[usize], Vec<&[f64]>)> {
        let symbols: Option<Vec<&[f64]>> = self.precisions.iter().map(|p| p.circulant_symbol()).collect();
        Some((&self.partition.labels, symbols?))
    }
}
