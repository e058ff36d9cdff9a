//! Estimators over batches of apparent tensors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub variance: f64,
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mode: String,
    pub samples: usize,
    pub dim: usize,
    /// Row-major over the `d x d` entries.
    pub entries: Vec<EntryStats>,
}

impl EstimatorReport {
    pub fn entry(&self, row: usize, col: usize) -> &EntryStats {
        &self.entries[row * self.dim + col]
    }

    pub fn mean_tensor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).mean)
    }
}

/// Mean and unbiased variance by the two-pass formula.
pub fn mean_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!("variance needs at least 2 samples, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, ss / (n - 1.0)))
}

/// Per-entry mean, unbiased variance and 95% half-width of a batch of tensors.
pub fn summarize(mode: &str, tensors: &[DMatrix<f64>]) -> Result<EstimatorReport> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to summarize".into()))?;
    let d = first.nrows();
    let m = tensors.len();
    let mut entries = Vec::with_capacity(d * d);
    for row in 0..d {
        for col in 0..d {
            let vals: Vec<f64> = tensors.iter().map(|t| t[(row, col)]).collect();
            let (mean, variance) = mean_variance(&vals)?;
            entries.push(EntryStats { row, col, mean, variance, ci95: Z95 * (variance / m as f64).sqrt() });
        }
    }
    Ok(EstimatorReport { mode: mode.to_string(), samples: m, dim: d, entries })
}

/// `Var_a / Var_b` for one tensor entry.
pub fn variance_ratio(a: &EstimatorReport, b: &EstimatorReport, row: usize, col: usize) -> Result<f64> {
    let vb = b.entry(row, col).variance;
    if !(vb > 0.0) {
        return Err(Error::InvalidArgument("variance ratio with zero denominator".into()));
    }
    Ok(a.entry(row, col).variance / vb)
}

/// Max-norm distance between the empirical mean and a reference tensor.
pub fn total_error(report: &EstimatorReport, reference: &DMatrix<f64>) -> f64 {
    (report.mean_tensor() - reference).amax()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `(ln x, ln y)` pairs.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the fit residuals.
    pub residual: f64,
}

/// Least squares line through `(ln x, ln y)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs positive values".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct abscissae".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit { points: logs, slope, intercept, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_formula() {
        let a = DMatrix::from_element(1, 1, 0.8);
        let b = DMatrix::from_element(1, 1, 0.9);
        let r = summarize("x", &[a, b]).unwrap();
        assert_relative_eq!(r.entry(0, 0).mean, 0.85);
        assert_relative_eq!(r.entry(0, 0).variance, 0.01 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.entry(0, 0).ci95, 1.96 * (0.005f64 / 2.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn needs_two_samples() {
        assert!(summarize("x", &[DMatrix::identity(2, 2)]).is_err());
    }

    #[test]
    fn slopes() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n: &f64| (n, 3.0 / (n * n))).collect();
        assert_relative_eq!(loglog_slope(&pts).unwrap().slope, -2.0, epsilon = 1e-12);
        let pts: Vec<(f64, f64)> = [2.0, 5.0, 7.0, 11.0].iter().map(|&n: &f64| (n, 0.5 / n)).collect();
        assert_relative_eq!(loglog_slope(&pts).unwrap().slope, -1.0, epsilon = 1e-12);
        assert!(loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn ratio_of_two_sample_variances() {
        let mk = |v: f64| EstimatorReport {
            mode: String::new(),
            samples: 100,
            dim: 1,
            entries: vec![EntryStats { row: 0, col: 0, mean: 0.0, variance: v, ci95: 0.0 }],
        };
        assert_relative_eq!(variance_ratio(&mk(0.0007118), &mk(0.0000379), 0, 0).unwrap(), 18.78, epsilon = 0.01);
        assert_relative_eq!(variance_ratio(&mk(0.0007118), &mk(0.0000024), 0, 0).unwrap(), 296.6, epsilon = 0.1);
        assert!(variance_ratio(&mk(1.0), &mk(0.0), 0, 0).is_err());
    }
}
