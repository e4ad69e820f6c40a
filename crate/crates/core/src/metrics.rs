//! Descriptive statistics panel for reconstructions.
//!
//! Quartiles use linear interpolation between order statistics: the `p`
//! quantile of sorted `x[0..n]` is `x[k] + f (x[k+1] - x[k])` with
//! `k + f = p (n - 1)`.

use crate::error::{Error, Result};
use crate::field::Field;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Row labels of the panel, in order.
pub const ROW_LABELS: [&str; 10] = [
    "x̄",
    "s",
    "Min",
    "Q1",
    "Median",
    "Q3",
    "Max",
    "ρ",
    "Residual MAE",
    "Residual MSE",
];

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Pearson correlation; `NaN` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let k = (pos.floor() as usize).min(n - 2);
    let f = pos - k as f64;
    sorted[k] + f * (sorted[k + 1] - sorted[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub correlation: Option<f64>,
    pub residual_mae: Option<f64>,
    pub residual_mse: Option<f64>,
}

impl Statistics {
    /// Values in [`ROW_LABELS`] order.
    pub fn rows(&self) -> [Option<f64>; 10] {
        [
            Some(self.mean),
            Some(self.std),
            Some(self.min),
            Some(self.q1),
            Some(self.median),
            Some(self.q3),
            Some(self.max),
            self.correlation,
            self.residual_mae,
            self.residual_mse,
        ]
    }
}

pub fn describe(values: &[f64]) -> Result<Statistics> {
    if values.is_empty() {
        return Err(Error::InvalidInput("statistics of an empty field".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field contains non-finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Statistics {
        mean: mean(values),
        std: sample_std(values),
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
        correlation: None,
        residual_mae: None,
        residual_mse: None,
    })
}

pub fn compare(estimate: &[f64], truth: &[f64]) -> Result<Statistics> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let mut st = describe(estimate)?;
    let n = estimate.len() as f64;
    st.correlation = Some(pearson(estimate, truth));
    st.residual_mae = Some(estimate.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / n);
    st.residual_mse = Some(estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / n);
    Ok(st)
}

/// Panel of `estimate` against `truth`, over every pixel.
pub fn report_statistics(estimate: &Field, truth: &Field) -> Result<Statistics> {
    if estimate.nx() != truth.nx() || estimate.ny() != truth.ny() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    compare(estimate.values(), truth.values())
}

/// Named columns of statistics, laid out with one row per label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatisticsTable {
    pub columns: Vec<(String, Statistics)>,
}

impl StatisticsTable {
    pub fn push(&mut self, name: impl Into<String>, stats: Statistics) {
        self.columns.push((name.into(), stats));
    }

    /// CSV with a `Statistic` header column; missing entries are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Statistic");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(&csv_escape(name));
        }
        out.push('\n');
        for (r, label) in ROW_LABELS.iter().enumerate() {
            out.push_str(label);
            for (_, st) in &self.columns {
                out.push(',');
                if let Some(v) = st.rows()[r] {
                    let _ = write!(out, "{v:.6}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering with three decimals.
    pub fn to_text(&self) -> String {
        let w0 = ROW_LABELS.iter().map(|l| l.chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = self.columns.iter().map(|(n, _)| n.chars().count().max(8)).collect();
        let mut out = format!("{:w0$}", "");
        for ((name, _), w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {name:>w$}");
        }
        out.push('\n');
        for (r, label) in ROW_LABELS.iter().enumerate() {
            let pad = w0 - label.chars().count();
            out.push_str(label);
            out.push_str(&" ".repeat(pad));
            for ((_, st), w) in self.columns.iter().zip(&widths) {
                match st.rows()[r] {
                    Some(v) => {
                        let _ = write!(out, "  {v:>w$.3}");
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_shifted() {
        let t: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = compare(&t, &t).unwrap();
        assert!((s.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.residual_mae, Some(0.0));
        assert_eq!(s.residual_mse, Some(0.0));
        let e: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        let s = compare(&e, &t).unwrap();
        assert!((s.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.residual_mae.unwrap() - 0.1).abs() < 1e-12);
        assert!((s.residual_mse.unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let s = describe(&x).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(describe(&[7.0]).unwrap().median, 7.0);
    }

    #[test]
    fn table_layout() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let mut table = StatisticsTable::default();
        table.push("True Image", describe(&t).unwrap());
        table.push("Isotropic", compare(&t, &t).unwrap());
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Statistic,True Image,Isotropic");
        assert_eq!(lines.len(), 11);
        for (line, label) in lines[1..].iter().zip(ROW_LABELS) {
            assert!(line.starts_with(&format!("{label},")));
        }
        assert!(lines[8].starts_with("ρ,,"));
        assert!(table.to_text().contains("Residual MSE"));
    }

    #[test]
    fn rejects_mismatch() {
        assert!(compare(&[1.0, 2.0], &[1.0]).is_err());
        assert!(describe(&[]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(v in prop::collection::vec(-10.0f64..10.0, 5..40), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = v.iter().enumerate().map(|(i, x)| x + i as f64 * 0.01).collect();
            let u: Vec<f64> = t.iter().enumerate().map(|(i, x)| x.sin() + (i % 3) as f64).collect();
            let r1 = pearson(&u, &t);
            let r2 = pearson(&u.iter().map(|x| a * x + b).collect::<Vec<_>>(), &t);
            prop_assume!(r1.is_finite());
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn quartiles_ordered_and_permutation_invariant(mut v in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            let s1 = describe(&v).unwrap();
            prop_assert!(s1.min <= s1.q1 && s1.q1 <= s1.median && s1.median <= s1.q3 && s1.q3 <= s1.max);
            v.reverse();
            let s2 = describe(&v).unwrap();
            prop_assert_eq!((s1.q1, s1.median, s1.q3), (s2.q1, s2.median, s2.q3));
        }
    }
}
