use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scalar values on a regular grid with an observation mask.
///
/// Storage is row-major, x fastest, with row 0 at the bottom (y = 0).
/// Pixel `(ix, iy)` sits at `(ix * spacing, iy * spacing)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    nx: usize,
    ny: usize,
    spacing: f64,
    values: Vec<f64>,
    mask: Vec<bool>,
    pub band: Option<String>,
}

impl Field {
    /// Fully observed field on the unit-width grid (`spacing = 1/nx`).
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("field dimensions must be positive".into()));
        }
        if values.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected: nx * ny,
                got: values.len(),
            });
        }
        let f = Self {
            nx,
            ny,
            spacing: 1.0 / nx as f64,
            mask: vec![true; values.len()],
            values,
            band: None,
        };
        f.check_observed_finite()?;
        Ok(f)
    }

    /// Field whose `false` mask entries may hold any value (including NaN).
    pub fn masked(nx: usize, ny: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let clean: Vec<f64> = values.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        let mut f = Self::new(nx, ny, clean)?.with_mask(mask)?;
        f.values = values;
        Ok(f)
    }

    pub fn square(n: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, n, values)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: mask.len(),
            });
        }
        self.mask = mask;
        self.check_observed_finite()?;
        Ok(self)
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_band(mut self, band: impl Into<String>) -> Self {
        self.band = Some(band.into());
        self
    }

    fn check_observed_finite(&self) -> Result<()> {
        if self
            .values
            .iter()
            .zip(&self.mask)
            .any(|(v, &m)| m && !v.is_finite())
        {
            return Err(Error::InvalidInput("observed values must be finite".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn is_observed(&self, ix: usize, iy: usize) -> bool {
        self.mask[iy * self.nx + ix]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn coords(&self, ix: usize, iy: usize) -> [f64; 2] {
        [ix as f64 * self.spacing, iy as f64 * self.spacing]
    }

    /// Coordinates and values of observed pixels.
    pub fn observed_points(&self) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let k = iy * self.nx + ix;
                if self.mask[k] {
                    pts.push(self.coords(ix, iy));
                    vals.push(self.values[k]);
                }
            }
        }
        (pts, vals)
    }

    /// Same geometry and mask with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Copy with every pixel marked observed.
    pub fn fully_observed(&self) -> Self {
        Self {
            mask: vec![true; self.values.len()],
            ..self.clone()
        }
    }
}
