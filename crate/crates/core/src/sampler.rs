//! Classical Monte Carlo, tolerance-gated SQS sampling and best-M-of-calM selection.
//!
//! Sample `m` always uses the seed `base_seed + m`, so runs in different
//! modes draw the same environments and can be compared pairwise.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{law_moments, sample_environment, sample_environment_sqs1_exact, DomainSpec, Environment, FieldSpec};
use crate::grid::discretize;
use crate::par::{self, Execution};
use crate::solver::{compute_homogenized, BoundaryCondition, HomogenizedSample, SolverOptions};
use crate::sqs::{combined_score, sqs1_error, sqs2_error, Normalizers, OfflineTables, SqsScore};
use crate::stats::{summarize, EstimatorReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Classical,
    SqsTolerance,
    SqsSelection,
}

impl SamplingMode {
    pub fn label(self) -> &'static str {
        match self {
            SamplingMode::Classical => "classical",
            SamplingMode::SqsTolerance => "sqs_tolerance",
            SamplingMode::SqsSelection => "sqs_selection",
        }
    }
}

/// Which conditions the tolerance gate checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqsOrder {
    First,
    #[default]
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplingMode,
    /// Retained sample count.
    pub m: usize,
    /// Trial count in selection mode.
    pub trials: usize,
    /// Tolerance on normalized scores in tolerance mode.
    pub tol: f64,
    /// When set, the tolerance becomes `lambda / sqrt(|Q_N|)`.
    pub tol_lambda: Option<f64>,
    pub order: SqsOrder,
    /// Draw every environment from the balanced sampler.
    pub sqs1_exact: bool,
    pub base_seed: u64,
    pub n: usize,
    pub r: usize,
    pub bc: BoundaryCondition,
    /// Weight of the first criterion in the combined score.
    pub weight: f64,
    /// Pilot size for the score normalizers.
    pub pilot: usize,
    pub rejection_cap: u64,
    pub solver: SolverOptions,
    pub execution: Execution,
}

impl SamplerConfig {
    pub fn new(mode: SamplingMode, n: usize, r: usize, m: usize) -> Self {
        SamplerConfig {
            mode,
            m,
            trials: m,
            tol: f64::INFINITY,
            tol_lambda: None,
            order: SqsOrder::Second,
            sqs1_exact: false,
            base_seed: 0,
            n,
            r,
            bc: BoundaryCondition::Periodic,
            weight: 0.5,
            pilot: 200,
            rejection_cap: 1_000_000,
            solver: SolverOptions::default(),
            execution: Execution::Parallel,
        }
    }

    /// Gate tolerance, `lambda / sqrt(N^d)` when the decreasing variant is on.
    pub fn effective_tol(&self, dim: usize) -> f64 {
        match self.tol_lambda {
            Some(lambda) => lambda / (self.n as f64).powf(0.5 * dim as f64),
            None => self.tol,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetainedSample {
    pub seed: u64,
    pub score: SqsScore,
    pub sample: HomogenizedSample,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub mode: SamplingMode,
    pub samples: Vec<RetainedSample>,
    pub offline_ms: f64,
    pub online_ms: f64,
    /// Environments drawn (and scored, outside classical mode).
    pub draws: u64,
    pub rejections: u64,
    pub corrector_batches: usize,
    pub criterion_evaluations: usize,
}

impl RunRecord {
    pub fn seeds(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.seed).collect()
    }

    pub fn acceptance_ratio(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.draws as f64
        }
    }
}

fn draw(spec: &FieldSpec, domain: &DomainSpec, exact: bool, seed: u64) -> Result<Environment> {
    if exact {
        sample_environment_sqs1_exact(spec, domain, seed)
    } else {
        sample_environment(spec, domain, seed)
    }
}

/// Discretize one environment and compute its apparent tensor.
pub fn solve_environment(
    spec: &FieldSpec,
    env: &Environment,
    r: usize,
    bc: BoundaryCondition,
    opts: &SolverOptions,
) -> Result<HomogenizedSample> {
    let grid = discretize(spec, env, r)?;
    compute_homogenized(&grid, bc, opts).map_err(|e| Error::SampleFailed { seed: env.seed, source: Box::new(e) })
}

fn check_tables(tables: Option<&OfflineTables>, cfg: &SamplerConfig, spec: &FieldSpec) -> Result<()> {
    if let Some(t) = tables {
        if t.n != cfg.n || t.r != cfg.r || t.dim != spec.dim() {
            return Err(Error::TableMismatch {
                expected: format!("N={} r={} d={}", cfg.n, cfg.r, spec.dim()),
                found: format!("N={} r={} d={}", t.n, t.r, t.dim),
            });
        }
    }
    Ok(())
}

fn score(env: &Environment, spec: &FieldSpec, tables: Option<&OfflineTables>) -> Result<SqsScore> {
    let moments = law_moments(spec);
    let err1 = sqs1_error(env, &moments);
    let err2 = match tables {
        Some(t) => sqs2_error(env, t)?,
        None => f64::NAN,
    };
    Ok(SqsScore { seed: env.seed, err1, err2, combined: f64::NAN })
}

fn solve_batch(
    spec: &FieldSpec,
    cfg: &SamplerConfig,
    domain: &DomainSpec,
    scored: Vec<SqsScore>,
) -> Result<Vec<RetainedSample>> {
    par::try_map_range(cfg.execution, scored.len(), |i| {
        let s = scored[i];
        let env = draw(spec, domain, cfg.sqs1_exact, s.seed)?;
        let sample = solve_environment(spec, &env, cfg.r, cfg.bc, &cfg.solver)?;
        Ok(RetainedSample { seed: s.seed, score: s, sample })
    })
}

/// Plain Monte Carlo over `M` consecutive seeds. Scores are recorded when
/// tables are supplied (`err2` is NaN otherwise).
pub fn run_classical(spec: &FieldSpec, cfg: &SamplerConfig, tables: Option<&OfflineTables>) -> Result<RunRecord> {
    check_tables(tables, cfg, spec)?;
    let start = Instant::now();
    let domain = DomainSpec::new(cfg.n, spec.dim())?;
    let scored = par::try_map_range(cfg.execution, cfg.m, |m| {
        let seed = cfg.base_seed.wrapping_add(m as u64);
        score(&draw(spec, &domain, cfg.sqs1_exact, seed)?, spec, tables)
    })?;
    let samples = solve_batch(spec, cfg, &domain, scored)?;
    Ok(RunRecord {
        mode: SamplingMode::Classical,
        corrector_batches: samples.len(),
        samples,
        offline_ms: 0.0,
        online_ms: start.elapsed().as_secs_f64() * 1e3,
        draws: cfg.m as u64,
        rejections: 0,
        criterion_evaluations: 0,
    })
}

fn normalized(err: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        err / sigma
    } else {
        err
    }
}

fn pilot_normalizers(spec: &FieldSpec, cfg: &SamplerConfig, domain: &DomainSpec, tables: Option<&OfflineTables>) -> Result<Normalizers> {
    let count = cfg.pilot.max(2);
    let scores = par::try_map_range(cfg.execution, count, |m| {
        let seed = cfg.base_seed.wrapping_add(m as u64);
        score(&draw(spec, domain, cfg.sqs1_exact, seed)?, spec, tables)
    })?;
    let e1: Vec<f64> = scores.iter().map(|s| s.err1).collect();
    let e2: Vec<f64> = scores.iter().map(|s| if s.err2.is_nan() { 0.0 } else { s.err2 }).collect();
    Ok(Normalizers::from_pilot(&e1, &e2))
}

/// Draw environments in seed order until `M` pass the tolerance gate on the
/// normalized criteria; only accepted environments are solved.
pub fn run_sqs_tolerance(spec: &FieldSpec, cfg: &SamplerConfig, tables: Option<&OfflineTables>) -> Result<RunRecord> {
    check_tables(tables, cfg, spec)?;
    if cfg.order == SqsOrder::Second && tables.is_none() {
        return Err(Error::InvalidArgument("second-order tolerance gate needs offline tables".into()));
    }
    let start = Instant::now();
    let domain = DomainSpec::new(cfg.n, spec.dim())?;
    let norms = pilot_normalizers(spec, cfg, &domain, tables)?;
    let tol = cfg.effective_tol(spec.dim());
    let gate_tables = if cfg.order == SqsOrder::Second { tables } else { None };

    let batch = 256usize;
    let mut accepted: Vec<SqsScore> = Vec::with_capacity(cfg.m);
    let mut draws: u64 = 0;
    let mut evaluations = 0usize;
    while accepted.len() < cfg.m {
        if draws >= cfg.rejection_cap {
            return Err(Error::RejectionCapExceeded { cap: cfg.rejection_cap, accepted: accepted.len(), wanted: cfg.m });
        }
        let len = batch.min((cfg.rejection_cap - draws) as usize);
        let first = draws;
        let scores = par::try_map_range(cfg.execution, len, |i| {
            let seed = cfg.base_seed.wrapping_add(first + i as u64);
            score(&draw(spec, &domain, cfg.sqs1_exact, seed)?, spec, gate_tables)
        })?;
        for mut s in scores {
            draws += 1;
            evaluations += 1;
            let n1 = normalized(s.err1, norms.sigma1);
            let pass = n1 <= tol
                && match cfg.order {
                    SqsOrder::First => true,
                    SqsOrder::Second => normalized(s.err2, norms.sigma2) <= tol,
                };
            if pass {
                if let (SqsOrder::First, Some(t)) = (cfg.order, tables) {
                    s.err2 = sqs2_error(&draw(spec, &domain, cfg.sqs1_exact, s.seed)?, t)?;
                }
                s.combined = combined_score(s.err1, if s.err2.is_nan() { 0.0 } else { s.err2 }, cfg.weight, Some(&norms));
                accepted.push(s);
                if accepted.len() == cfg.m {
                    break;
                }
            }
        }
    }
    let samples = solve_batch(spec, cfg, &domain, accepted)?;
    Ok(RunRecord {
        mode: SamplingMode::SqsTolerance,
        corrector_batches: samples.len(),
        samples,
        offline_ms: 0.0,
        online_ms: start.elapsed().as_secs_f64() * 1e3,
        draws,
        rejections: draws - cfg.m as u64,
        criterion_evaluations: evaluations,
    })
}

/// Score `calM` environments, keep the `M` best (ties by ascending seed) and
/// solve only those. With `sqs1_exact` every draw is balanced and the ranking
/// uses the second criterion alone.
pub fn run_sqs_selection(spec: &FieldSpec, cfg: &SamplerConfig, tables: &OfflineTables) -> Result<RunRecord> {
    check_tables(Some(tables), cfg, spec)?;
    if cfg.m > cfg.trials {
        return Err(Error::InvalidArgument(format!("M={} exceeds the trial count {}", cfg.m, cfg.trials)));
    }
    let start = Instant::now();
    let domain = DomainSpec::new(cfg.n, spec.dim())?;
    let mut scores = par::try_map_range(cfg.execution, cfg.trials, |m| {
        let seed = cfg.base_seed.wrapping_add(m as u64);
        score(&draw(spec, &domain, cfg.sqs1_exact, seed)?, spec, Some(tables))
    })?;
    if cfg.sqs1_exact {
        scores.iter_mut().for_each(|s| s.combined = s.err2);
    } else {
        let pilot = cfg.pilot.min(scores.len());
        let e1: Vec<f64> = scores[..pilot].iter().map(|s| s.err1).collect();
        let e2: Vec<f64> = scores[..pilot].iter().map(|s| s.err2).collect();
        let norms = Normalizers::from_pilot(&e1, &e2);
        scores.iter_mut().for_each(|s| s.combined = combined_score(s.err1, s.err2, cfg.weight, Some(&norms)));
    }
    scores.sort_by(|a, b| a.combined.total_cmp(&b.combined).then(a.seed.cmp(&b.seed)));
    scores.truncate(cfg.m);
    let samples = solve_batch(spec, cfg, &domain, scores)?;
    Ok(RunRecord {
        mode: SamplingMode::SqsSelection,
        corrector_batches: samples.len(),
        samples,
        offline_ms: 0.0,
        online_ms: start.elapsed().as_secs_f64() * 1e3,
        draws: cfg.trials as u64,
        rejections: (cfg.trials - cfg.m) as u64,
        criterion_evaluations: cfg.trials,
    })
}

/// Dispatch on `cfg.mode`.
pub fn run(spec: &FieldSpec, cfg: &SamplerConfig, tables: Option<&OfflineTables>) -> Result<RunRecord> {
    match cfg.mode {
        SamplingMode::Classical => run_classical(spec, cfg, tables),
        SamplingMode::SqsTolerance => run_sqs_tolerance(spec, cfg, tables),
        SamplingMode::SqsSelection => {
            let t = tables.ok_or_else(|| Error::InvalidArgument("selection needs offline tables".into()))?;
            run_sqs_selection(spec, cfg, t)
        }
    }
}

/// Per-entry mean, variance and 95% half-width of the retained tensors.
pub fn estimate(record: &RunRecord) -> Result<EstimatorReport> {
    let tensors: Vec<_> = record.samples.iter().map(|s| s.sample.tensor.clone()).collect();
    summarize(record.mode.label(), &tensors)
}
