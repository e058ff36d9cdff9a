//! Random lattice coefficient fields `A = C0 + eta * X_k * C1(y)`.
//!
//! Coefficients are diagonal: `C0` is a constant diagonal matrix and `C1` is
//! either a constant diagonal matrix or a table of diagonal matrices on a
//! regular subdivision of the unit cell, repeated periodically.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Stream id reserved for the balanced sampler, far from any cell index.
const BALANCED_STREAM: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellLaw {
    /// `+1` with probability `q`, `-1` otherwise.
    Bernoulli { q: f64 },
    /// Uniform on `[-1, 1]`.
    Uniform,
    /// Centered normal with standard deviation `sigma`, conditioned on `[-1, 1]`.
    TruncatedGaussian { sigma: f64 },
    /// Degenerate law, always `value`.
    Deterministic { value: f64 },
}

impl CellLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            CellLaw::Bernoulli { q } if !(0.0..=1.0).contains(&q) => {
                Err(Error::InvalidSpec(format!("Bernoulli parameter q={q} outside [0,1]")))
            }
            CellLaw::TruncatedGaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidSpec(format!("truncated Gaussian sigma={sigma} must be positive")))
            }
            CellLaw::Deterministic { value } if !(-1.0..=1.0).contains(&value) => {
                Err(Error::InvalidSpec(format!("deterministic value {value} outside [-1,1]")))
            }
            _ => Ok(()),
        }
    }

    /// Map a uniform variate `u` in `[0, 1)` to a draw of the law.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            CellLaw::Bernoulli { q } => {
                if u < q {
                    1.0
                } else {
                    -1.0
                }
            }
            CellLaw::Uniform => 2.0 * u - 1.0,
            CellLaw::TruncatedGaussian { sigma } => {
                let normal = Normal::standard();
                let lo = normal.cdf(-1.0 / sigma);
                let hi = normal.cdf(1.0 / sigma);
                let p = (lo + u * (hi - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                (sigma * normal.inverse_cdf(p)).clamp(-1.0, 1.0)
            }
            CellLaw::Deterministic { value } => value,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            CellLaw::Bernoulli { q } => format!("bernoulli(q={q})"),
            CellLaw::Uniform => "uniform".to_string(),
            CellLaw::TruncatedGaussian { sigma } => format!("truncated_gaussian(sigma={sigma})"),
            CellLaw::Deterministic { value } => format!("deterministic(value={value})"),
        }
    }

    fn parse_label(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown law label `{s}`"));
        let arg = |prefix: &str| -> Result<f64> {
            let inner = s
                .strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(bad)?;
            inner.parse::<f64>().map_err(|_| bad())
        };
        if s == "uniform" {
            Ok(CellLaw::Uniform)
        } else if s.starts_with("bernoulli(") {
            Ok(CellLaw::Bernoulli { q: arg("bernoulli(q=")? })
        } else if s.starts_with("truncated_gaussian(") {
            Ok(CellLaw::TruncatedGaussian { sigma: arg("truncated_gaussian(sigma=")? })
        } else if s.starts_with("deterministic(") {
            Ok(CellLaw::Deterministic { value: arg("deterministic(value=")? })
        } else {
            Err(bad())
        }
    }
}

/// Periodic unit-cell coefficient `C1`, stored by its diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnitCoefficient {
    Constant { diag: Vec<f64> },
    /// `sub^d` diagonals in row-major order over the sub-cells of `Q`.
    Table { sub: usize, diags: Vec<Vec<f64>> },
}

impl UnitCoefficient {
    pub fn identity(dim: usize) -> Self {
        UnitCoefficient::Constant { diag: vec![1.0; dim] }
    }

    /// Diagonal at sub-cell `sub_index` of a table (ignored for constants).
    pub fn diag(&self, sub_index: usize) -> &[f64] {
        match self {
            UnitCoefficient::Constant { diag } => diag,
            UnitCoefficient::Table { diags, .. } => &diags[sub_index],
        }
    }

    pub fn subdivision(&self) -> usize {
        match self {
            UnitCoefficient::Constant { .. } => 1,
            UnitCoefficient::Table { sub, .. } => *sub,
        }
    }

    fn all_diags(&self) -> Box<dyn Iterator<Item = &[f64]> + '_> {
        match self {
            UnitCoefficient::Constant { diag } => Box::new(std::iter::once(diag.as_slice())),
            UnitCoefficient::Table { diags, .. } => Box::new(diags.iter().map(|d| d.as_slice())),
        }
    }
}

/// Extract the diagonal of a symmetric matrix, rejecting off-diagonal entries.
pub fn diagonal_of(m: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidSpec(format!("{what} is not square")));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > 1e-14 * scale {
                return Err(Error::InvalidSpec(format!(
                    "{what} has off-diagonal entry ({i},{j}); only diagonal coefficients are supported"
                )));
            }
        }
    }
    Ok((0..m.nrows()).map(|i| m[(i, i)]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    dim: usize,
    eta: f64,
    c0: Vec<f64>,
    c1: UnitCoefficient,
    law: CellLaw,
    lambda_min: f64,
    lambda_max: f64,
}

impl FieldSpec {
    /// Validate and build a field specification.
    ///
    /// `c0` is the diagonal of `C0`. Coercivity is checked on every sub-cell
    /// diagonal for the extreme cell values `c = +-1`, which is exact for
    /// diagonal coefficients.
    pub fn new(dim: usize, eta: f64, c0: Vec<f64>, c1: UnitCoefficient, law: CellLaw) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidSpec(format!("dimension {dim} not in 1..=3")));
        }
        if !(eta > -1.0 && eta < 1.0) {
            return Err(Error::InvalidSpec(format!("eta={eta} outside (-1,1)")));
        }
        if c0.len() != dim {
            return Err(Error::InvalidSpec(format!("C0 has {} entries, expected {dim}", c0.len())));
        }
        law.validate()?;
        match &c1 {
            UnitCoefficient::Constant { diag } if diag.len() != dim => {
                return Err(Error::InvalidSpec(format!("C1 has {} entries, expected {dim}", diag.len())));
            }
            UnitCoefficient::Table { sub, diags } => {
                if *sub == 0 || diags.len() != sub.pow(dim as u32) {
                    return Err(Error::InvalidSpec(format!(
                        "C1 table with sub={sub} needs {} entries, found {}",
                        sub.pow(dim as u32),
                        diags.len()
                    )));
                }
                if diags.iter().any(|d| d.len() != dim) {
                    return Err(Error::InvalidSpec("C1 table entry has wrong length".into()));
                }
            }
            _ => {}
        }
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = f64::NEG_INFINITY;
        for d1 in c1.all_diags() {
            for a in 0..dim {
                let spread = (eta * d1[a]).abs();
                lambda_min = lambda_min.min(c0[a] - spread);
                lambda_max = lambda_max.max(c0[a] + spread);
            }
        }
        if !(lambda_min > 0.0) || !lambda_max.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "coefficient not uniformly coercive: smallest eigenvalue bound {lambda_min}"
            )));
        }
        Ok(FieldSpec { dim, eta, c0, c1, law, lambda_min, lambda_max })
    }

    /// Build from full matrices, which must be diagonal.
    pub fn from_matrices(
        eta: f64,
        c0: &DMatrix<f64>,
        c1: &DMatrix<f64>,
        law: CellLaw,
    ) -> Result<Self> {
        let d0 = diagonal_of(c0, "C0")?;
        let d1 = diagonal_of(c1, "C1")?;
        FieldSpec::new(d0.len(), eta, d0, UnitCoefficient::Constant { diag: d1 }, law)
    }

    /// `eta`, `C0 = C1 = Id`, symmetric Bernoulli cells.
    pub fn checkerboard(dim: usize, eta: f64) -> Result<Self> {
        FieldSpec::new(
            dim,
            eta,
            vec![1.0; dim],
            UnitCoefficient::identity(dim),
            CellLaw::Bernoulli { q: 0.5 },
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn c0(&self) -> &[f64] {
        &self.c0
    }
    pub fn c1(&self) -> &UnitCoefficient {
        &self.c1
    }
    pub fn law(&self) -> CellLaw {
        self.law
    }
    /// Eigenvalue bounds over all cell values in `[-1, 1]`.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    /// Same deterministic part with a different `eta`.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        FieldSpec::new(self.dim, eta, self.c0.clone(), self.c1.clone(), self.law)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub n: usize,
    pub dim: usize,
}

impl DomainSpec {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDomain("N must be at least 1".into()));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidDomain(format!("dimension {dim} not in 1..=3")));
        }
        Ok(DomainSpec { n, dim })
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Row-major multi-index of cell `k` (last axis fastest).
    pub fn coords(&self, mut k: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = k % self.n;
            k /= self.n;
        }
        out
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords[..self.dim].iter().fold(0, |acc, &c| acc * self.n + c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub domain: DomainSpec,
    pub cells: Vec<f64>,
    pub seed: u64,
}

impl Environment {
    pub fn mean(&self) -> f64 {
        self.cells.iter().sum::<f64>() / self.cells.len() as f64
    }

    /// Text form: a header of `key value` lines, then one cell value per line.
    pub fn to_text(&self, spec: &FieldSpec) -> String {
        let mut out = String::with_capacity(self.cells.len() * 8 + 128);
        out.push_str(&format!("dimension {}\n", self.domain.dim));
        out.push_str(&format!("side {}\n", self.domain.n));
        out.push_str(&format!("law {}\n", spec.law().label()));
        out.push_str(&format!("eta {:?}\n", spec.eta()));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str("cells\n");
        for v in &self.cells {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    /// Parse the text form. Returns the environment with the recorded law and eta.
    pub fn from_text(text: &str) -> Result<(Environment, CellLaw, f64)> {
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, found `{line}`")))?;
            Ok(rest.trim().to_string())
        };
        let num = |s: String, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
        };
        let dim = num(field("dimension")?, "dimension")?;
        let n = num(field("side")?, "side")?;
        let law = CellLaw::parse_label(&field("law")?)?;
        let eta_s = field("eta")?;
        let eta: f64 = eta_s.parse().map_err(|_| Error::Parse(format!("bad eta `{eta_s}`")))?;
        let seed_s = field("seed")?;
        let seed: u64 = seed_s.parse().map_err(|_| Error::Parse(format!("bad seed `{seed_s}`")))?;
        match lines.next() {
            Some("cells") => {}
            other => return Err(Error::Parse(format!("expected `cells`, found {other:?}"))),
        }
        let domain = DomainSpec::new(n, dim)?;
        let cells = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad cell value `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != domain.cell_count() {
            return Err(Error::Parse(format!(
                "expected {} cells, found {}",
                domain.cell_count(),
                cells.len()
            )));
        }
        if cells.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Parse("cell value outside [-1,1]".into()));
        }
        Ok((Environment { domain, cells, seed }, law, eta))
    }
}

fn check_domain(spec: &FieldSpec, domain: &DomainSpec) -> Result<()> {
    if spec.dim() != domain.dim {
        return Err(Error::InvalidDomain(format!(
            "domain dimension {} does not match field dimension {}",
            domain.dim,
            spec.dim()
        )));
    }
    Ok(())
}

/// Draw the cell values of one environment.
///
/// Cell `k` uses its own ChaCha stream (seed, stream = k) and a single draw,
/// so the result does not depend on the order in which cells are visited.
pub fn sample_environment(spec: &FieldSpec, domain: &DomainSpec, seed: u64) -> Result<Environment> {
    check_domain(spec, domain)?;
    let law = spec.law();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = (0..domain.cell_count())
        .map(|k| {
            rng.set_stream(k as u64);
            rng.set_word_pos(0);
            law.quantile(rng.random::<f64>())
        })
        .collect();
    Ok(Environment { domain: *domain, cells, seed })
}

/// Draw an environment with exactly `round(|Q_N| q)` cells at `+1`, chosen
/// as a uniformly random subset.
pub fn sample_environment_sqs1_exact(spec: &FieldSpec, domain: &DomainSpec, seed: u64) -> Result<Environment> {
    check_domain(spec, domain)?;
    let q = match spec.law() {
        CellLaw::Bernoulli { q } => q,
        _ => return Err(Error::UnsupportedLaw("balanced sampling needs a Bernoulli law")),
    };
    let n = domain.cell_count();
    let target = n as f64 * q;
    if (target - target.floor() - 0.5).abs() < 1e-12 {
        return Err(Error::ExactBalanceImpossible { cells: n });
    }
    let plus = target.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BALANCED_STREAM);
    let mut cells = vec![-1.0; n];
    for k in index::sample(&mut rng, n, plus) {
        cells[k] = 1.0;
    }
    Ok(Environment { domain: *domain, cells, seed })
}

/// Coefficient at a point `x` of the closed box `[0, N]^d`.
pub fn coefficient_at(spec: &FieldSpec, env: &Environment, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = spec.dim();
    let n = env.domain.n;
    if x.len() != d || x.iter().any(|&xi| !(0.0..=n as f64).contains(&xi)) {
        return Err(Error::OutOfDomain(x.to_vec()));
    }
    let sub = spec.c1().subdivision();
    let mut cell = [0usize; 3];
    let mut sub_idx = 0;
    for a in 0..d {
        let k = (x[a].floor() as usize).min(n - 1);
        cell[a] = k;
        let offset = x[a] - k as f64;
        let s = ((offset * sub as f64).floor() as usize).min(sub - 1);
        sub_idx = sub_idx * sub + s;
    }
    let xk = env.cells[env.domain.index(&cell)];
    let c1 = spec.c1().diag(sub_idx);
    Ok(DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            spec.c0()[i] + spec.eta() * xk * c1[i]
        } else {
            0.0
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawMoments {
    pub mean: f64,
    pub variance: f64,
    /// `(k, Cov(X_0, X_k))` pairs; only `k = 0` for independent cells.
    pub covariance_series: Vec<(Vec<i64>, f64)>,
    pub total_covariance: f64,
}

impl LawMoments {
    pub fn covariance(&self, k: &[i64]) -> f64 {
        self.covariance_series
            .iter()
            .find(|(kk, _)| kk.as_slice() == k)
            .map_or(0.0, |(_, c)| *c)
    }
}

/// Closed-form moments of the cell law (independent cells).
pub fn law_moments(spec: &FieldSpec) -> LawMoments {
    let (mean, variance) = match spec.law() {
        CellLaw::Bernoulli { q } => (2.0 * q - 1.0, 4.0 * q * (1.0 - q)),
        CellLaw::Uniform => (0.0, 1.0 / 3.0),
        CellLaw::TruncatedGaussian { sigma } => {
            let normal = Normal::standard();
            let alpha = 1.0 / sigma;
            let mass = 2.0 * normal.cdf(alpha) - 1.0;
            (0.0, sigma * sigma * (1.0 - 2.0 * alpha * normal.pdf(alpha) / mass))
        }
        CellLaw::Deterministic { value } => (value, 0.0),
    };
    let variance = variance.max(0.0);
    LawMoments {
        mean,
        variance,
        covariance_series: vec![(vec![0; spec.dim()], variance)],
        total_covariance: variance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn checkerboard_coefficients() {
        let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
        let domain = DomainSpec::new(2, 2).unwrap();
        let env = Environment { domain, cells: vec![1.0, -1.0, -1.0, 1.0], seed: 0 };
        let a = coefficient_at(&spec, &env, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(a[(0, 0)], 1.5);
        assert_relative_eq!(a[(1, 1)], 1.5);
        assert_eq!(a[(0, 1)], 0.0);
        let b = coefficient_at(&spec, &env, &[0.5, 1.5]).unwrap();
        assert_relative_eq!(b[(0, 0)], 0.5);
        assert_relative_eq!(a[(0, 0)] / b[(0, 0)], 3.0);
        assert!(coefficient_at(&spec, &env, &[2.0, 2.0]).is_ok());
        assert!(matches!(coefficient_at(&spec, &env, &[2.1, 0.0]), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn zero_eta_gives_c0() {
        let spec = FieldSpec::new(2, 0.0, vec![2.0, 3.0], UnitCoefficient::identity(2), CellLaw::Uniform).unwrap();
        let domain = DomainSpec::new(3, 2).unwrap();
        let env = sample_environment(&spec, &domain, 5).unwrap();
        let a = coefficient_at(&spec, &env, &[1.2, 2.7]).unwrap();
        assert_eq!(a, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0])));
    }

    #[test]
    fn rejects_noncoercive_and_offdiagonal() {
        assert!(FieldSpec::new(1, 0.9, vec![1.0], UnitCoefficient::Constant { diag: vec![2.0] }, CellLaw::Uniform).is_err());
        let c0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        let c1 = DMatrix::identity(2, 2);
        assert!(FieldSpec::from_matrices(0.5, &c0, &c1, CellLaw::Uniform).is_err());
        assert!(FieldSpec::checkerboard(4, 0.5).is_err());
        assert!(FieldSpec::checkerboard(2, 1.0).is_err());
    }

    #[test]
    fn moments() {
        let m = |law| law_moments(&FieldSpec::new(1, 0.1, vec![1.0], UnitCoefficient::identity(1), law).unwrap());
        let b = m(CellLaw::Bernoulli { q: 0.75 });
        assert_relative_eq!(b.mean, 0.5);
        assert_relative_eq!(b.variance, 0.75);
        assert_eq!(b.covariance_series.len(), 1);
        let u = m(CellLaw::Uniform);
        assert_relative_eq!(u.variance, 1.0 / 3.0);
        let g = m(CellLaw::TruncatedGaussian { sigma: 1e3 });
        assert_relative_eq!(g.variance, 1.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn balanced_sampler() {
        let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
        let env = sample_environment_sqs1_exact(&spec, &DomainSpec::new(20, 2).unwrap(), 3).unwrap();
        assert_eq!(env.cells.iter().filter(|&&v| v == 1.0).count(), 200);
        let odd = DomainSpec::new(3, 1).unwrap();
        let spec1 = FieldSpec::checkerboard(1, 0.5).unwrap();
        assert!(matches!(
            sample_environment_sqs1_exact(&spec1, &odd, 0),
            Err(Error::ExactBalanceImpossible { cells: 3 })
        ));
        let uni = FieldSpec::new(1, 0.5, vec![1.0], UnitCoefficient::identity(1), CellLaw::Uniform).unwrap();
        assert!(sample_environment_sqs1_exact(&uni, &DomainSpec::new(2, 1).unwrap(), 0).is_err());
    }

    #[test]
    fn text_round_trip() {
        let spec = FieldSpec::new(2, 0.3, vec![1.0, 1.0], UnitCoefficient::identity(2), CellLaw::Uniform).unwrap();
        let env = sample_environment(&spec, &DomainSpec::new(4, 2).unwrap(), 99).unwrap();
        let (back, law, eta) = Environment::from_text(&env.to_text(&spec)).unwrap();
        assert_eq!(back, env);
        assert_eq!(law, CellLaw::Uniform);
        assert_eq!(eta, 0.3);
    }
}
