//! Gaussian models where the effect of conditioning on the empirical mean is
//! known in closed form, and the 1D harmonic-mean oracle.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::quadrature::GaussHermite;

/// Nodes used for catalog moments without a closed form.
pub const QUADRATURE_NODES: usize = 200;

fn quadrature() -> &'static GaussHermite {
    static Q: OnceLock<GaussHermite> = OnceLock::new();
    Q.get_or_init(|| GaussHermite::new(QUADRATURE_NODES))
}

/// Test functions with known moments under the standard normal law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Exp,
    Affine { slope: f64, intercept: f64 },
    /// `c0 + c1 x + c2 x^2 + c3 x^3`.
    Cubic { c: [f64; 4] },
    /// `2 + tanh(x)`, moments by quadrature.
    TwoPlusTanh,
    Constant { value: f64 },
}

/// `E[g]`, `E[g']`, `Var[g]` and `E[X g'(X)]` for `X ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussMoments {
    pub mean: f64,
    pub mean_derivative: f64,
    pub variance: f64,
    pub mean_x_derivative: f64,
}

/// Moments of the standard normal, `E[X^k]` for `k = 0..=6`.
const NORMAL_MOMENTS: [f64; 7] = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0];

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Exp => x.exp(),
            TestFunction::Affine { slope, intercept } => slope * x + intercept,
            TestFunction::Cubic { c } => c[0] + x * (c[1] + x * (c[2] + x * c[3])),
            TestFunction::TwoPlusTanh => 2.0 + x.tanh(),
            TestFunction::Constant { value } => value,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Exp => x.exp(),
            TestFunction::Affine { slope, .. } => slope,
            TestFunction::Cubic { c } => c[1] + x * (2.0 * c[2] + 3.0 * c[3] * x),
            TestFunction::TwoPlusTanh => 1.0 / x.cosh().powi(2),
            TestFunction::Constant { .. } => 0.0,
        }
    }

    pub fn moments(&self) -> GaussMoments {
        match *self {
            TestFunction::Exp => {
                let e = std::f64::consts::E;
                GaussMoments {
                    mean: e.sqrt(),
                    mean_derivative: e.sqrt(),
                    variance: e * e - e,
                    mean_x_derivative: e.sqrt(),
                }
            }
            TestFunction::Affine { slope, intercept } => GaussMoments {
                mean: intercept,
                mean_derivative: slope,
                variance: slope * slope,
                mean_x_derivative: 0.0,
            },
            TestFunction::Cubic { c } => {
                let m = |p: &[f64]| p.iter().enumerate().map(|(k, a)| a * NORMAL_MOMENTS[k]).sum::<f64>();
                let mut sq = [0.0; 7];
                for i in 0..4 {
                    for j in 0..4 {
                        sq[i + j] += c[i] * c[j];
                    }
                }
                let mean = m(&c);
                GaussMoments {
                    mean,
                    mean_derivative: m(&[c[1], 2.0 * c[2], 3.0 * c[3]]),
                    variance: m(&sq) - mean * mean,
                    mean_x_derivative: m(&[0.0, c[1], 2.0 * c[2], 3.0 * c[3]]),
                }
            }
            TestFunction::TwoPlusTanh => quadrature_moments(self),
            TestFunction::Constant { value } => GaussMoments {
                mean: value,
                mean_derivative: 0.0,
                variance: 0.0,
                mean_x_derivative: 0.0,
            },
        }
    }
}

/// Moments of any catalog function by Gauss–Hermite quadrature.
pub fn quadrature_moments(g: &TestFunction) -> GaussMoments {
    let q = quadrature();
    let mean = q.expect(|x| g.eval(x));
    GaussMoments {
        mean,
        mean_derivative: q.expect(|x| g.derivative(x)),
        variance: q.expect(|x| (g.eval(x) - mean).powi(2)),
        mean_x_derivative: q.expect(|x| x * g.derivative(x)),
    }
}

/// What the sample is conditioned on, in terms of `sqrt(n) * mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditioning {
    /// Empirical mean exactly zero.
    Exact,
    /// `z0 / sqrt(n) <= mean <= z1 / sqrt(n)`.
    Window { z0: f64, z1: f64 },
}

impl Conditioning {
    fn validate(&self) -> Result<()> {
        match *self {
            Conditioning::Window { z0, z1 } if !(z1 > z0) => {
                Err(Error::InvalidArgument(format!("empty conditioning window [{z0}, {z1}]")))
            }
            _ => Ok(()),
        }
    }
}

/// Mean and variance of `N(0, 1)` conditioned on `[z0, z1]`.
pub fn truncated_normal_moments(z0: f64, z1: f64) -> (f64, f64) {
    let nrm = Normal::standard();
    let mass = nrm.cdf(z1) - nrm.cdf(z0);
    let (p0, p1) = (nrm.pdf(z0), nrm.pdf(z1));
    let mean = (p0 - p1) / mass;
    let second = 1.0 + (z0 * p0 - z1 * p1) / mass;
    (mean, second - mean * mean)
}

/// Draw from `N(0, 1)` conditioned on `[z0, z1]` by inverting the CDF.
pub fn truncated_normal_draw(z0: f64, z1: f64, u: f64) -> f64 {
    let nrm = Normal::standard();
    // Work in the lower tail for windows far to the right, where the CDF saturates.
    if z0 > 0.0 {
        return -truncated_normal_draw(-z1, -z0, 1.0 - u);
    }
    let (lo, hi) = (nrm.cdf(z0), nrm.cdf(z1));
    let p = (lo + u * (hi - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    nrm.inverse_cdf(p).clamp(z0, z1)
}

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

/// Fill `y` with i.i.d. standard normals and return the conditioned sample
/// `y - mean(y) + s` in `x`.
fn conditioned_pair(rng: &mut ChaCha8Rng, cond: Conditioning, y: &mut [f64], x: &mut [f64]) {
    let n = y.len() as f64;
    for v in y.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let mean = y.iter().sum::<f64>() / n;
    let shift = match cond {
        Conditioning::Exact => 0.0,
        Conditioning::Window { z0, z1 } => truncated_normal_draw(z0, z1, rng.random::<f64>()) / n.sqrt(),
    };
    for (xi, yi) in x.iter_mut().zip(y.iter()) {
        *xi = yi - mean + shift;
    }
}

/// One exact draw of `n` standard normals conditioned on their empirical mean.
pub fn conditional_gaussian_sample(n: usize, cond: Conditioning, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("conditional sampling needs n >= 2".into()));
    }
    cond.validate()?;
    let mut y = vec![0.0; n];
    let mut x = vec![0.0; n];
    conditioned_pair(&mut draw_rng(seed, 0), cond, &mut y, &mut x);
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroDSpec {
    pub n: usize,
    pub g: TestFunction,
    pub conditioning: Conditioning,
}

/// Sample mean and unbiased variance of a stream of values.
fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut count, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        count += 1;
        sum += v;
    }
    let mean = sum / count as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (count as f64 - 1.0))
}

/// For each draw, the unconditioned and the conditioned value of
/// `F(sample)`, computed from the same underlying normals.
fn paired_draws(
    n: usize,
    cond: Conditioning,
    draws: usize,
    seed: u64,
    exec: Execution,
    f: impl Fn(&[f64]) -> f64 + Sync + Send,
) -> Vec<(f64, f64)> {
    par::map_range(exec, draws, |i| {
        let mut rng = draw_rng(seed, i);
        let mut y = vec![0.0; n];
        let mut x = vec![0.0; n];
        conditioned_pair(&mut rng, cond, &mut y, &mut x);
        (f(&y), f(&x))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMeanReport {
    pub bias: f64,
    pub bias_std_error: f64,
    pub variance_ratio: f64,
    pub predicted_bias: f64,
    pub predicted_ratio: f64,
}

/// Bias and variance reduction of `mean(g(X_i))` under exact conditioning.
pub fn exact_mean_check(spec: &ZeroDSpec, draws: usize, seed: u64, exec: Execution) -> Result<ExactMeanReport> {
    if spec.n < 2 || draws < 2 {
        return Err(Error::InvalidArgument("need n >= 2 and at least 2 draws".into()));
    }
    let g = spec.g;
    let mom = g.moments();
    let n = spec.n as f64;
    let pairs = paired_draws(spec.n, Conditioning::Exact, draws, seed, exec, |v| {
        v.iter().map(|&x| g.eval(x)).sum::<f64>() / v.len() as f64
    });
    let (_, var_u) = mean_var(pairs.iter().map(|p| p.0));
    let (mean_c, var_c) = mean_var(pairs.iter().map(|p| p.1));
    Ok(ExactMeanReport {
        bias: mean_c - mom.mean,
        bias_std_error: (var_c / draws as f64).sqrt(),
        variance_ratio: if var_u > 0.0 { var_c / var_u } else { f64::NAN },
        predicted_bias: -mom.mean_derivative / (2.0 * n),
        predicted_ratio: predicted_ratio(&mom),
    })
}

fn predicted_ratio(mom: &GaussMoments) -> f64 {
    if mom.variance > 0.0 {
        1.0 - mom.mean_derivative.powi(2) / mom.variance
    } else {
        f64::NAN
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMeanReport {
    pub variance_ratio: f64,
    pub predicted_ratio: f64,
    /// Variance of the standard normal conditioned on the window.
    pub c: f64,
}

/// Variance reduction of `mean(g(X_i))` when the mean is conditioned on a window.
pub fn window_mean_check(g: TestFunction, n: usize, z0: f64, z1: f64, draws: usize, seed: u64, exec: Execution) -> Result<WindowMeanReport> {
    let cond = Conditioning::Window { z0, z1 };
    cond.validate()?;
    if n < 2 || draws < 2 {
        return Err(Error::InvalidArgument("need n >= 2 and at least 2 draws".into()));
    }
    let mom = g.moments();
    let (_, c) = truncated_normal_moments(z0, z1);
    let pairs = paired_draws(n, cond, draws, seed, exec, |v| v.iter().map(|&x| g.eval(x)).sum::<f64>() / v.len() as f64);
    let (_, var_u) = mean_var(pairs.iter().map(|p| p.0));
    let (_, var_c) = mean_var(pairs.iter().map(|p| p.1));
    Ok(WindowMeanReport {
        variance_ratio: if var_u > 0.0 { var_c / var_u } else { f64::NAN },
        predicted_ratio: 1.0 - (1.0 - c) * mom.mean_derivative.powi(2) / mom.variance,
        c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeReport {
    pub bias_mc: f64,
    pub bias_mc_std_error: f64,
    pub bias_sqs: f64,
    pub bias_sqs_std_error: f64,
    pub variance_ratio: f64,
    pub predicted_bias_mc: f64,
    pub predicted_bias_sqs: f64,
    pub predicted_ratio: f64,
    /// Set when `g` has zero variance and the ratio is undefined.
    pub degenerate: bool,
}

/// Bias and variance of `1 / mean(g(X_i))` with and without exact conditioning.
///
/// Biases are estimated from antithetic pairs `(X, -X)`, which share the
/// conditioning and leave both expectations unchanged.
pub fn composite_check(g: TestFunction, n: usize, draws: usize, seed: u64, exec: Execution) -> Result<CompositeReport> {
    if n < 2 || draws < 2 {
        return Err(Error::InvalidArgument("need n >= 2 and at least 2 draws".into()));
    }
    let mom = g.moments();
    if !(mom.mean > 0.0) {
        return Err(Error::InvalidArgument("1/x transform needs E[g] > 0".into()));
    }
    let inv_mean = |v: &[f64], sign: f64| v.len() as f64 / v.iter().map(|&x| g.eval(sign * x)).sum::<f64>();
    let rows = par::map_range(exec, draws, |i| {
        let mut rng = draw_rng(seed, i);
        let mut y = vec![0.0; n];
        let mut x = vec![0.0; n];
        conditioned_pair(&mut rng, Conditioning::Exact, &mut y, &mut x);
        let (fy, fx) = (inv_mean(&y, 1.0), inv_mean(&x, 1.0));
        (fy, fx, 0.5 * (fy + inv_mean(&y, -1.0)), 0.5 * (fx + inv_mean(&x, -1.0)))
    });
    let (_, var_u) = mean_var(rows.iter().map(|r| r.0));
    let (_, var_c) = mean_var(rows.iter().map(|r| r.1));
    let (anti_u, anti_var_u) = mean_var(rows.iter().map(|r| r.2));
    let (anti_c, anti_var_c) = mean_var(rows.iter().map(|r| r.3));
    let g0 = mom.mean;
    let (phi1, phi2) = (-1.0 / (g0 * g0), 2.0 / (g0 * g0 * g0));
    let nf = n as f64;
    let degenerate = !(mom.variance > 0.0) || !(var_u > 0.0);
    Ok(CompositeReport {
        bias_mc: anti_u - 1.0 / g0,
        bias_mc_std_error: (anti_var_u / draws as f64).sqrt(),
        bias_sqs: anti_c - 1.0 / g0,
        bias_sqs_std_error: (anti_var_c / draws as f64).sqrt(),
        variance_ratio: if degenerate { f64::NAN } else { var_c / var_u },
        predicted_bias_mc: phi2 * mom.variance / (2.0 * nf),
        predicted_bias_sqs: phi2 * (mom.variance - mom.mean_derivative.powi(2)) / (2.0 * nf)
            - phi1 * mom.mean_x_derivative / (2.0 * nf),
        predicted_ratio: predicted_ratio(&mom),
        degenerate,
    })
}

/// Harmonic mean, the exact effective coefficient of a 1D layered medium.
pub fn harmonic_oracle(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("harmonic mean needs positive values".into()));
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms_match_quadrature() {
        for g in [
            TestFunction::Exp,
            TestFunction::Affine { slope: 2.0, intercept: -1.0 },
            TestFunction::Cubic { c: [0.5, -1.0, 0.25, 1.0] },
        ] {
            let a = g.moments();
            let b = quadrature_moments(&g);
            assert_relative_eq!(a.mean, b.mean, epsilon = 1e-10);
            assert_relative_eq!(a.mean_derivative, b.mean_derivative, epsilon = 1e-10);
            assert_relative_eq!(a.variance, b.variance, max_relative = 1e-8);
            assert_relative_eq!(a.mean_x_derivative, b.mean_x_derivative, epsilon = 1e-10);
        }
        let cube = TestFunction::Cubic { c: [0.0, 0.0, 0.0, 1.0] }.moments();
        assert_eq!(cube.mean_derivative, 3.0);
        assert_eq!(cube.variance, 15.0);
    }

    #[test]
    fn truncated_normal() {
        let (m, v) = truncated_normal_moments(-1.0, 1.0);
        assert_eq!(m, 0.0);
        assert_relative_eq!(v, 0.29112509, epsilon = 1e-7);
        for u in [0.0, 0.3, 0.999] {
            let z = truncated_normal_draw(1.0, 2.0, u);
            assert!((1.0..=2.0).contains(&z));
        }
        assert!(truncated_normal_draw(5.0, 6.0, 0.5) > 5.0);
    }

    #[test]
    fn exact_conditioning_sums_to_zero() {
        let x = conditional_gaussian_sample(50, Conditioning::Exact, 3).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
        assert!(conditional_gaussian_sample(5, Conditioning::Window { z0: 1.0, z1: 1.0 }, 0).is_err());
        let w = conditional_gaussian_sample(16, Conditioning::Window { z0: 1.0, z1: 2.0 }, 9).unwrap();
        let s = w.iter().sum::<f64>() / 16.0;
        assert!((0.25..=0.5).contains(&s));
    }

    #[test]
    fn affine_function_has_no_conditional_variance() {
        let spec = ZeroDSpec { n: 10, g: TestFunction::Affine { slope: 1.0, intercept: 0.0 }, conditioning: Conditioning::Exact };
        let r = exact_mean_check(&spec, 1000, 1, Execution::Sequential).unwrap();
        assert_eq!(r.predicted_ratio, 0.0);
        assert!(r.variance_ratio < 1e-25);
    }

    #[test]
    fn constant_function_is_flagged() {
        let r = composite_check(TestFunction::Constant { value: 2.0 }, 10, 100, 0, Execution::Sequential).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.bias_mc, 0.0);
        assert_eq!(r.bias_sqs, 0.0);
    }

    #[test]
    fn harmonic() {
        assert_eq!(harmonic_oracle(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(harmonic_oracle(&[1.5, 0.5]).unwrap(), 0.75);
        assert!(harmonic_oracle(&[1.0, 0.0]).is_err());
    }
}
