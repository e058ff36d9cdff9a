//! Experiment configuration: a TOML document validated before any compute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqs_core::analytic::TestFunction;
use sqs_core::field::{CellLaw, DomainSpec, FieldSpec, UnitCoefficient};
use sqs_core::sampler::{SamplerConfig, SamplingMode, SqsOrder};
use sqs_core::solver::{BoundaryCondition, SolverOptions};
use sqs_core::sqs::OfflineConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: Option<FieldSection>,
    pub domain: Option<DomainSection>,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub offline: OfflineSection,
    #[serde(default)]
    pub statistics: StatisticsSection,
    pub table1: Option<Table1Section>,
    #[serde(default)]
    pub analytic: AnalyticSection,
    /// Output directory, overridden by `--out`.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub dim: usize,
    pub eta: f64,
    /// Diagonal of `C0`; identity when omitted.
    pub c0: Option<Vec<f64>>,
    /// `C1`; identity when omitted.
    pub c1: Option<UnitCoefficient>,
    pub law: CellLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// Box sides `N` to sweep.
    pub sizes: Vec<usize>,
    #[serde(default = "default_r")]
    pub r: usize,
}

fn default_r() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub mode: SamplingMode,
    pub m: usize,
    pub trials: usize,
    pub tol: Option<f64>,
    pub tol_lambda: Option<f64>,
    pub order: SqsOrder,
    pub sqs1_exact: bool,
    pub seed: u64,
    pub bc: BoundaryCondition,
    pub weight: f64,
    pub pilot: usize,
    pub rejection_cap: u64,
    pub solver_tol: f64,
    pub max_iter: Option<usize>,
    /// Also run classical Monte Carlo on the same seeds and report variance ratios.
    pub paired_classical: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            mode: SamplingMode::Classical,
            m: 100,
            trials: 2000,
            tol: None,
            tol_lambda: None,
            order: SqsOrder::Second,
            sqs1_exact: false,
            seed: 0,
            bc: BoundaryCondition::Periodic,
            weight: 0.5,
            pilot: 200,
            rejection_cap: 1_000_000,
            solver_tol: 1e-10,
            max_iter: None,
            paired_classical: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSection {
    pub radius: Option<usize>,
    pub shells: Option<usize>,
    pub decay_threshold: Option<f64>,
    pub solver_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Closed form when one is known, nothing otherwise.
    #[default]
    Auto,
    None,
    /// Mean over exactly balanced samples on a larger box.
    Surrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatisticsSection {
    pub reference: ReferenceMode,
    pub surrogate_n: usize,
    pub surrogate_m: usize,
}

impl Default for StatisticsSection {
    fn default() -> Self {
        StatisticsSection { reference: ReferenceMode::Auto, surrogate_n: 40, surrogate_m: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table1Section {
    pub contrasts: Vec<f64>,
    /// Box side; the first `domain.sizes` entry when omitted.
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticSection {
    pub seed: u64,
    pub draws: usize,
    pub exact_mean: Option<ExactMeanSection>,
    pub window_mean: Option<WindowMeanSection>,
    pub composite: Option<CompositeSection>,
    pub harmonic: Option<HarmonicSection>,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        AnalyticSection {
            seed: 0,
            draws: 100_000,
            exact_mean: Some(ExactMeanSection::default()),
            window_mean: Some(WindowMeanSection::default()),
            composite: Some(CompositeSection::default()),
            harmonic: Some(HarmonicSection::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactMeanSection {
    pub g: TestFunction,
    pub n: usize,
    pub ratio_tol: f64,
    /// Allowed bias deviation in standard errors.
    pub bias_sigmas: f64,
}

impl Default for ExactMeanSection {
    fn default() -> Self {
        ExactMeanSection { g: TestFunction::Exp, n: 100, ratio_tol: 0.02, bias_sigmas: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowMeanSection {
    pub g: TestFunction,
    pub n: usize,
    /// Windows `[z0, z1]` on `sqrt(n) * mean`.
    pub windows: Vec<[f64; 2]>,
    pub ratio_tol: f64,
}

impl Default for WindowMeanSection {
    fn default() -> Self {
        WindowMeanSection { g: TestFunction::Exp, n: 10_000, windows: vec![[-1.0, 1.0], [1.0, 2.0]], ratio_tol: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositeSection {
    pub g: TestFunction,
    pub n: usize,
    pub ratio_tol: f64,
    /// Accepted band for measured over predicted classical bias.
    pub bias_band: [f64; 2],
    /// Cell counts for the bias scaling fit.
    pub sweep: Vec<usize>,
    pub slope_tol: f64,
}

impl Default for CompositeSection {
    fn default() -> Self {
        CompositeSection {
            g: TestFunction::TwoPlusTanh,
            n: 200,
            ratio_tol: 0.05,
            bias_band: [0.7, 1.3],
            sweep: vec![50, 100, 200],
            slope_tol: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicSection {
    pub cells: usize,
    pub environments: usize,
    pub values: [f64; 2],
    pub rel_tol: f64,
}

impl Default for HarmonicSection {
    fn default() -> Self {
        HarmonicSection { cells: 10, environments: 100, values: [0.5, 1.5], rel_tol: 1e-8 }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.field.is_some() {
            self.field_spec()?;
        }
        if let Some(d) = &self.domain {
            if d.sizes.is_empty() || d.sizes.contains(&0) {
                return bad("domain.sizes must list positive box sides".into());
            }
            if d.r == 0 {
                return bad("domain.r must be positive".into());
            }
        }
        let s = &self.sampler;
        if s.m == 0 || (s.m > s.trials && s.mode == SamplingMode::SqsSelection) {
            return bad(format!("sampler.m={} must be positive and at most trials={}", s.m, s.trials));
        }
        if !(s.weight > 0.0 && s.weight < 1.0) {
            return bad(format!("sampler.weight={} outside (0,1)", s.weight));
        }
        if !(s.solver_tol > 0.0 && s.solver_tol < 1.0) {
            return bad(format!("sampler.solver_tol={} outside (0,1)", s.solver_tol));
        }
        if s.mode == SamplingMode::SqsTolerance && s.tol.is_none() && s.tol_lambda.is_none() {
            return bad("tolerance mode needs sampler.tol or sampler.tol_lambda".into());
        }
        if s.tol.is_some_and(|t| !(t >= 0.0)) || s.tol_lambda.is_some_and(|t| !(t > 0.0)) {
            return bad("sampler tolerances must be non-negative".into());
        }
        if let Some(t) = &self.table1 {
            if t.contrasts.iter().any(|&c| !(c >= 1.0 && c.is_finite())) {
                return bad("table1.contrasts must be finite and at least 1".into());
            }
        }
        if self.analytic.draws < 2 {
            return bad("analytic.draws must be at least 2".into());
        }
        if let Some(p) = &self.analytic.window_mean {
            if let Some(w) = p.windows.iter().find(|w| !(w[1] > w[0])) {
                return bad(format!("empty conditioning window [{}, {}]", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn field_spec(&self) -> Result<FieldSpec, CliError> {
        let f = self.field.as_ref().ok_or_else(|| CliError::Config("missing [field] section".into()))?;
        FieldSpec::new(
            f.dim,
            f.eta,
            f.c0.clone().unwrap_or_else(|| vec![1.0; f.dim]),
            f.c1.clone().unwrap_or_else(|| UnitCoefficient::identity(f.dim)),
            f.law,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn domain(&self) -> Result<&DomainSection, CliError> {
        self.domain.as_ref().ok_or_else(|| CliError::Config("missing [domain] section".into()))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.sampler.solver_tol, max_iter: self.sampler.max_iter }
    }

    pub fn sampler_config(&self, n: usize, r: usize) -> SamplerConfig {
        let s = &self.sampler;
        let mut cfg = SamplerConfig::new(s.mode, n, r, s.m);
        cfg.trials = s.trials;
        cfg.tol = s.tol.unwrap_or(f64::INFINITY);
        cfg.tol_lambda = s.tol_lambda;
        cfg.order = s.order;
        cfg.sqs1_exact = s.sqs1_exact;
        cfg.base_seed = s.seed;
        cfg.bc = s.bc;
        cfg.weight = s.weight;
        cfg.pilot = s.pilot;
        cfg.rejection_cap = s.rejection_cap;
        cfg.solver = self.solver();
        cfg
    }

    pub fn offline_config(&self, n: usize, r: usize) -> OfflineConfig {
        let mut cfg = OfflineConfig::new(n, r);
        cfg.radius = self.offline.radius;
        cfg.shells = self.offline.shells;
        if let Some(t) = self.offline.decay_threshold {
            cfg.decay_threshold = t;
        }
        cfg.solver = SolverOptions { tol: self.offline.solver_tol.unwrap_or(self.sampler.solver_tol), max_iter: self.sampler.max_iter };
        cfg
    }

    /// Check that every box in the sweep is a valid domain for the field.
    pub fn domains(&self, spec: &FieldSpec) -> Result<Vec<DomainSpec>, CliError> {
        self.domain()?
            .sizes
            .iter()
            .map(|&n| DomainSpec::new(n, spec.dim()).map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// SHA-256 of the canonical JSON form, after command-line overrides.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// `eta` for a two-phase contrast `(1 + eta) / (1 - eta)`.
pub fn eta_for_contrast(contrast: f64) -> f64 {
    (contrast - 1.0) / (contrast + 1.0)
}
