//! Offline tables and the first- and second-order SQS criteria.
//!
//! All tables are built with the same finite volume discretization as the
//! corrector solves, with `C0` constant. Cell integrals `int_{Q+k} C1 grad v`
//! use the half-face rule `sum_c C1_c h^d (g_low + g_up) / 2`, which is what
//! the first-order flux `t1 grad u1` sums to on the discrete level.
//!
//! The discrete harmonic face average adds a second-order term
//! `-(y1 - y2)^2 / (4a)` on faces between unit cells. It is a quadratic form
//! in the cell values with a nearest-neighbour kernel `D`, which is added to
//! both sides of the second-order condition so that the criterion matches the
//! second-order tensor of the discrete problem.

use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{Environment, FieldSpec, LawMoments};
use crate::grid::{sub_index_of, unit_cell_of, CoefficientGrid, FaceField, Lattice};
use crate::lattice_fft::{self, FftCache};
use crate::solver::{solve_flux_problem, BoundaryCondition, Operator, SolverOptions};

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Parameters of the offline stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    /// Side `N` of `Q_N` in unit cells.
    pub n: usize,
    /// Fine cells per unit edge.
    pub r: usize,
    /// Half-width of the truncated box for the whole-space problem; `None` means `max(2N, 16)`.
    pub radius: Option<usize>,
    /// Shell radius kept in the whole-space table; `None` picks the smallest admissible one.
    pub shells: Option<usize>,
    /// Largest allowed ratio between the outer-shell and overall table norms.
    pub decay_threshold: f64,
    pub solver: SolverOptions,
}

impl OfflineConfig {
    pub fn new(n: usize, r: usize) -> Self {
        OfflineConfig {
            n,
            r,
            radius: None,
            shells: None,
            decay_threshold: 0.05,
            solver: SolverOptions::default(),
        }
    }

    pub fn radius(&self) -> usize {
        self.radius.unwrap_or((2 * self.n).max(16))
    }
}

/// Content hash of everything the tables depend on. `eta` is excluded: the
/// tables only involve `C0`, `C1` and the law.
pub fn table_key(spec: &FieldSpec, cfg: &OfflineConfig) -> String {
    let payload = serde_json::json!({
        "version": TABLE_FORMAT_VERSION,
        "dim": spec.dim(),
        "c0": spec.c0(),
        "c1": spec.c1(),
        "law": spec.law(),
        "n": cfg.n,
        "r": cfg.r,
        "radius": cfg.radius(),
        "shells": cfg.shells,
        "decay_threshold": cfg.decay_threshold,
        "tol": cfg.solver.tol,
    });
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

/// A `d x d` block stored row-major as `[p * d + a]`: direction `p`, component `a`.
pub type Block = Vec<f64>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OfflineTables {
    pub version: u32,
    pub key: String,
    pub dim: usize,
    pub n: usize,
    pub r: usize,
    pub radius: usize,
    pub shells: usize,
    pub c0: Vec<f64>,
    pub moments: LawMoments,
    /// Periodic unit-cell corrector per direction.
    pub u1bar: Vec<Vec<f64>>,
    /// `Q_N`-periodic response to a unit source on cell `0`, per direction.
    pub phi1n: Vec<Vec<f64>>,
    /// Truncated whole-space response, per direction. Not stored in artifacts.
    #[serde(skip)]
    pub phi1: Option<Vec<Vec<f64>>>,
    /// `I_k` for `|k|_inf <= shells`, whole-space response integrated over `Q + k`.
    pub i_inf: Vec<(Vec<i64>, Block)>,
    /// Circulant table `I_{k,j} = T[j - k mod N]`, row-major over `Z_N^d`.
    pub circulant: Vec<Block>,
    /// Second-order face kernel for `|delta|_inf <= 1`.
    pub face_kernel: Vec<(Vec<i64>, Block)>,
    /// `int_{Q_N} C1 grad phi1n(. - k)`, the same for every `k`.
    pub ibar_n: Block,
    /// `ibar_n + int_Q C1 grad u1bar`, the same for every `k`.
    pub ik_n: Block,
    /// Right-hand side of the second-order condition.
    pub rhs2: Block,
    /// Real part of the DFT of the effective circulant table, per block entry.
    pub spectrum: Vec<Vec<f64>>,
    /// Outer-shell to overall norm ratio at the chosen `shells`.
    pub decay_ratio: f64,
    /// Linear solves spent building the tables.
    pub linear_solves: usize,
    #[serde(skip)]
    fft: FftCache,
}

type OffsetTable = Vec<(Vec<i64>, Block)>;

fn zero_block(d: usize) -> Block {
    vec![0.0; d * d]
}

fn block_norm(b: &[f64]) -> f64 {
    b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn add_into(acc: &mut [f64], b: &[f64], scale: f64) {
    for (x, y) in acc.iter_mut().zip(b) {
        *x += scale * y;
    }
}

/// Multi-index of unit cell `k` in a box of `cells` unit cells per side.
fn unit_coords(k: usize, cells: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    let mut k = k;
    for a in (0..d).rev() {
        out[a] = k % cells;
        k /= cells;
    }
    out
}

fn unit_index(coords: &[usize], cells: usize) -> usize {
    coords.iter().fold(0, |acc, &c| acc * cells + c)
}

/// `C1` diagonal on every fine cell of a lattice with `r` cells per unit edge,
/// masked to the unit cell `only` when given.
fn c1_field(spec: &FieldSpec, lattice: &Lattice, r: usize, only: Option<usize>) -> Vec<f64> {
    let d = lattice.dim;
    let sub = spec.c1().subdivision();
    let mut y = vec![0.0; lattice.len() * d];
    for c in 0..lattice.len() {
        if only.is_some_and(|k| unit_cell_of(lattice, r, c) != k) {
            continue;
        }
        y[c * d..(c + 1) * d].copy_from_slice(spec.c1().diag(sub_index_of(lattice, r, sub, c)));
    }
    y
}

/// Face fluxes `(y1 + y2) / 2 * e_p` on interior faces.
fn first_order_source(op: &Operator, y: &[f64], p: usize) -> FaceField {
    let lattice = op.lattice();
    let d = lattice.dim;
    let mut s = FaceField::zeros(lattice);
    for c in 0..lattice.len() {
        if let Some(u) = op.up_neighbor(c, p) {
            s.up[p][c] = 0.5 * (y[c * d + p] + y[u * d + p]);
        }
    }
    s
}

/// Half-face rule for `int_{Q+k} C1 grad v` on every unit cell `k`.
/// Returns one `d`-vector (component `a`) per unit cell.
fn unit_cell_integrals(
    spec: &FieldSpec,
    lattice: &Lattice,
    r: usize,
    periodic: bool,
    grad: &FaceField,
) -> Vec<Vec<f64>> {
    let d = lattice.dim;
    let cells = lattice.side / r;
    let y = c1_field(spec, lattice, r, None);
    let half_vol = 0.5 * lattice.cell_volume();
    let mut out = vec![vec![0.0; d]; cells.pow(d as u32)];
    for c in 0..lattice.len() {
        let k = unit_cell_of(lattice, r, c);
        for a in 0..d {
            let s = lattice.stride(a);
            let first = lattice.coord(c, a) == 0;
            let low = if first && !periodic {
                grad.low_bnd[a][c]
            } else if first {
                grad.up[a][c + (lattice.side - 1) * s]
            } else {
                grad.up[a][c - s]
            };
            out[k][a] += y[c * d + a] * half_vol * (low + grad.up[a][c]);
        }
    }
    out
}

/// Periodic response on `Q_N` to a unit source on cell `source`, integrated
/// over every unit cell. Returns the `d x d` block per unit cell together with
/// the solutions per direction.
pub fn cell_response_table(
    spec: &FieldSpec,
    n: usize,
    r: usize,
    source: &[usize],
    opts: &SolverOptions,
) -> Result<(Vec<Block>, Vec<Vec<f64>>)> {
    let d = spec.dim();
    let lattice = Lattice::new(d, n * r, 1.0 / r as f64);
    let grid0 = CoefficientGrid::constant(lattice, spec.c0())?;
    let op = Operator::new(&grid0, BoundaryCondition::Periodic);
    let y = c1_field(spec, &lattice, r, Some(unit_index(source, n)));
    let mut table = vec![zero_block(d); n.pow(d as u32)];
    let mut sols = Vec::with_capacity(d);
    for p in 0..d {
        let sol = solve_flux_problem(&op, &first_order_source(&op, &y, p), opts)?;
        let g = op.face_gradient(&sol.w);
        for (k, v) in unit_cell_integrals(spec, &lattice, r, true, &g).into_iter().enumerate() {
            table[k][p * d..(p + 1) * d].copy_from_slice(&v);
        }
        sols.push(sol.w);
    }
    Ok((table, sols))
}

/// Second-order face kernel `D[delta]` for `|delta|_inf <= 1`.
fn face_kernel(spec: &FieldSpec, r: usize) -> Vec<(Vec<i64>, Block)> {
    let d = spec.dim();
    // Unit cell 0 at the center of a 3^d block, so every face it owns is interior.
    let lattice = Lattice::new(d, 3 * r, 1.0 / r as f64);
    let y = c1_field(spec, &lattice, r, None);
    let center = unit_index(&vec![1; d], 3);
    let vol = lattice.cell_volume();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|k| unit_coords(k, 3, d).iter().map(|&c| c as i64 - 1).collect())
        .collect();
    let mut kernel: Vec<(Vec<i64>, Block)> = offsets.iter().map(|o| (o.clone(), zero_block(d))).collect();
    let slot = |delta: &[i64]| offsets.iter().position(|o| o.as_slice() == delta).unwrap();
    let zero = vec![0i64; d];
    for c in 0..lattice.len() {
        if unit_cell_of(&lattice, r, c) != center {
            continue;
        }
        for a in 0..d {
            let u = lattice.up(c, a, false).expect("interior face");
            let ku = unit_cell_of(&lattice, r, u);
            let (y1, y2) = (y[c * d + a], y[u * d + a]);
            let scale = vol / (4.0 * spec.c0()[a]);
            let diag = a * d + a;
            kernel[slot(&zero)].1[diag] -= scale * (y1 * y1 + y2 * y2);
            if ku == center {
                kernel[slot(&zero)].1[diag] += 2.0 * scale * y1 * y2;
            } else {
                let mut delta = zero.clone();
                delta[a] = 1;
                kernel[slot(&delta)].1[diag] += scale * y1 * y2;
                delta[a] = -1;
                kernel[slot(&delta)].1[diag] += scale * y1 * y2;
            }
        }
    }
    kernel
}

/// Truncated whole-space response on a Dirichlet box of `(2R+1)^d` unit cells,
/// integrated over every unit cell; keyed by offset from the source cell.
fn whole_space_table(
    spec: &FieldSpec,
    r: usize,
    radius: usize,
    opts: &SolverOptions,
) -> Result<(OffsetTable, Vec<Vec<f64>>)> {
    let d = spec.dim();
    let cells = 2 * radius + 1;
    let lattice = Lattice::new(d, cells * r, 1.0 / r as f64);
    let grid0 = CoefficientGrid::constant(lattice, spec.c0())?;
    let op = Operator::new(&grid0, BoundaryCondition::Dirichlet);
    let center = unit_index(&vec![radius; d], cells);
    let y = c1_field(spec, &lattice, r, Some(center));
    let mut table: Vec<(Vec<i64>, Block)> = (0..cells.pow(d as u32))
        .map(|k| {
            let off = unit_coords(k, cells, d).iter().map(|&c| c as i64 - radius as i64).collect();
            (off, zero_block(d))
        })
        .collect();
    let mut sols = Vec::with_capacity(d);
    for p in 0..d {
        let sol = solve_flux_problem(&op, &first_order_source(&op, &y, p), opts)?;
        let g = op.face_gradient(&sol.w);
        for (k, v) in unit_cell_integrals(spec, &lattice, r, false, &g).into_iter().enumerate() {
            table[k].1[p * d..(p + 1) * d].copy_from_slice(&v);
        }
        sols.push(sol.w);
    }
    Ok((table, sols))
}

fn linf(k: &[i64]) -> usize {
    k.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0)
}

/// Build every table needed to score environments on `Q_N`.
pub fn build_offline_tables(spec: &FieldSpec, moments: &LawMoments, cfg: &OfflineConfig) -> Result<OfflineTables> {
    let d = spec.dim();
    let (n, r) = (cfg.n, cfg.r);
    let radius = cfg.radius();
    if n == 0 || r == 0 {
        return Err(Error::InvalidArgument("N and r must be positive".into()));
    }
    if radius < n || radius < 1 {
        return Err(Error::InvalidArgument(format!("truncation radius R={radius} must be at least N={n}")));
    }
    if cfg.shells.is_some_and(|k| k + 1 > radius) {
        return Err(Error::InvalidArgument("shell radius K must be at most R - 1".into()));
    }
    crate::grid::check_resolution(spec, r)?;
    let solves_before = crate::solver::linear_solve_count();
    let opts = cfg.solver;

    // Whole-space response and its decay, measured with the face kernel added
    // so that the half-face rule does not leak into the neighbouring shell.
    let (full, phi1) = whole_space_table(spec, r, radius, &opts)?;
    let kernel = face_kernel(spec, r);
    let effective: Vec<Block> = full
        .iter()
        .map(|(o, b)| {
            let mut b = b.clone();
            if let Some((_, kb)) = kernel.iter().find(|(ko, _)| ko == o) {
                add_into(&mut b, kb, 1.0);
            }
            b
        })
        .collect();
    let overall = effective.iter().map(|b| block_norm(b)).fold(0.0, f64::max);
    let shell_ratio = |k: usize| {
        if overall == 0.0 {
            return 0.0;
        }
        full.iter()
            .zip(&effective)
            .filter(|((o, _), _)| linf(o) == k)
            .map(|(_, b)| block_norm(b))
            .fold(0.0, f64::max)
            / overall
    };
    let max_shell = radius - 1;
    let shells = match cfg.shells {
        Some(k) => {
            let ratio = shell_ratio(k);
            if ratio > cfg.decay_threshold {
                return Err(Error::SlowDecay { ratio, threshold: cfg.decay_threshold, max_shell: k });
            }
            k
        }
        None => (1..=max_shell).find(|&k| shell_ratio(k) <= cfg.decay_threshold).ok_or_else(|| {
            Error::SlowDecay { ratio: shell_ratio(max_shell), threshold: cfg.decay_threshold, max_shell }
        })?,
    }
    .max(1);
    let decay_ratio = shell_ratio(shells);
    let i_inf: Vec<(Vec<i64>, Block)> = full.into_iter().filter(|(o, _)| linf(o) <= shells).collect();

    // Periodic response on Q_N and the periodic unit-cell corrector.
    let (circulant, phi1n) = cell_response_table(spec, n, r, &vec![0; d], &opts)?;
    let (u1bar_block, u1bar) = {
        let lattice = Lattice::new(d, r, 1.0 / r as f64);
        let grid0 = CoefficientGrid::constant(lattice, spec.c0())?;
        let op = Operator::new(&grid0, BoundaryCondition::Periodic);
        let y = c1_field(spec, &lattice, r, None);
        let mut block = zero_block(d);
        let mut sols = Vec::with_capacity(d);
        for p in 0..d {
            let sol = solve_flux_problem(&op, &first_order_source(&op, &y, p), &opts)?;
            let g = op.face_gradient(&sol.w);
            let v = &unit_cell_integrals(spec, &lattice, r, true, &g)[0];
            block[p * d..(p + 1) * d].copy_from_slice(v);
            sols.push(sol.w);
        }
        (block, sols)
    };

    let mut ibar_n = zero_block(d);
    for b in &circulant {
        add_into(&mut ibar_n, b, 1.0);
    }
    let mut ik_n = ibar_n.clone();
    add_into(&mut ik_n, &u1bar_block, 1.0);

    let mut rhs2 = zero_block(d);
    for (k, cov) in &moments.covariance_series {
        if let Some((_, b)) = i_inf.iter().find(|(o, _)| o == k) {
            add_into(&mut rhs2, b, *cov);
        }
        if let Some((_, b)) = kernel.iter().find(|(o, _)| o == k) {
            add_into(&mut rhs2, b, *cov);
        }
    }

    let mut tables = OfflineTables {
        version: TABLE_FORMAT_VERSION,
        key: table_key(spec, cfg),
        dim: d,
        n,
        r,
        radius,
        shells,
        c0: spec.c0().to_vec(),
        moments: moments.clone(),
        u1bar,
        phi1n,
        phi1: Some(phi1),
        i_inf,
        circulant,
        face_kernel: kernel,
        ibar_n,
        ik_n,
        rhs2,
        spectrum: Vec::new(),
        decay_ratio,
        linear_solves: 0,
        fft: FftCache::default(),
    };
    tables.spectrum = tables.effective_spectrum();
    tables.linear_solves = crate::solver::linear_solve_count() - solves_before;
    Ok(tables)
}

impl OfflineTables {
    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Whole-space table entry, zero outside the kept shells.
    pub fn i_inf_at(&self, k: &[i64]) -> Block {
        self.i_inf
            .iter()
            .find(|(o, _)| o.as_slice() == k)
            .map_or_else(|| zero_block(self.dim), |(_, b)| b.clone())
    }

    /// Whole-space entry plus the face kernel at the same offset.
    pub fn effective_i_inf(&self, k: &[i64]) -> Block {
        let mut b = self.i_inf_at(k);
        if let Some((_, kb)) = self.face_kernel.iter().find(|(o, _)| o.as_slice() == k) {
            add_into(&mut b, kb, 1.0);
        }
        b
    }

    /// Circulant entry `I_{k,j}` for unit cells `k`, `j` of `Q_N`.
    pub fn pair(&self, k: &[usize], j: &[usize]) -> &Block {
        let delta: Vec<usize> = k.iter().zip(j).map(|(&a, &b)| (b + self.n - a) % self.n).collect();
        &self.circulant[unit_index(&delta, self.n)]
    }

    /// Circulant table plus the face kernel folded onto `Z_N^d`.
    pub fn effective_circulant(&self) -> Vec<Block> {
        let mut out = self.circulant.clone();
        let n = self.n as i64;
        for (delta, b) in &self.face_kernel {
            let idx: Vec<usize> = delta.iter().map(|&v| v.rem_euclid(n) as usize).collect();
            add_into(&mut out[unit_index(&idx, self.n)], b, 1.0);
        }
        out
    }

    /// Linear coefficient of the second-order condition, with or without the unit-cell corrector.
    pub fn linear_coefficient(&self, use_bar: bool) -> Block {
        let mut b = if use_bar { self.ibar_n.clone() } else { self.ik_n.clone() };
        for (_, kb) in &self.face_kernel {
            add_into(&mut b, kb, 2.0);
        }
        b
    }

    fn effective_spectrum(&self) -> Vec<Vec<f64>> {
        let eff = self.effective_circulant();
        let d = self.dim;
        (0..d * d)
            .map(|e| {
                let vals: Vec<f64> = eff.iter().map(|b| b[e]).collect();
                lattice_fft::forward_real(&vals, self.n, d, &self.fft).into_iter().map(|z| z.re).collect()
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    /// Load tables, refusing artifacts built for another setup or format.
    pub fn load(path: &Path, expected_key: &str) -> Result<Self> {
        let tables: OfflineTables = serde_json::from_slice(&std::fs::read(path)?)?;
        if tables.version != TABLE_FORMAT_VERSION || tables.key != expected_key {
            return Err(Error::TableMismatch { expected: expected_key.to_string(), found: tables.key });
        }
        Ok(tables)
    }

    fn check_env(&self, env: &Environment) -> Result<()> {
        if env.domain.n != self.n || env.domain.dim != self.dim {
            return Err(Error::TableMismatch {
                expected: format!("N={} d={}", self.n, self.dim),
                found: format!("N={} d={}", env.domain.n, env.domain.dim),
            });
        }
        Ok(())
    }
}

/// `|mean_k X_k - E[X_0]|`.
pub fn sqs1_error(env: &Environment, moments: &LawMoments) -> f64 {
    (env.mean() - moments.mean).abs()
}

/// Left-hand side of the second-order condition, one entry per `(p, a)`.
pub fn sqs2_lhs(env: &Environment, tables: &OfflineTables, use_bar: bool) -> Result<Block> {
    tables.check_env(env)?;
    let d = tables.dim;
    let n = tables.cell_count() as f64;
    let mean = tables.moments.mean;
    let xbar: Vec<f64> = env.cells.iter().map(|x| x - mean).collect();
    let power: Vec<f64> = lattice_fft::forward_real(&xbar, tables.n, d, &tables.fft)
        .into_iter()
        .map(|z: Complex64| z.norm_sqr())
        .collect();
    let sum_xbar: f64 = xbar.iter().sum();
    let linear = tables.linear_coefficient(use_bar);
    Ok((0..d * d)
        .map(|e| {
            let quad: f64 = power.iter().zip(&tables.spectrum[e]).map(|(p, s)| p * s).sum();
            quad / (n * n) + mean * sum_xbar * linear[e] / n
        })
        .collect())
}

/// Quadratic plus linear form evaluated by the direct double loop over cell pairs.
pub fn sqs2_lhs_direct(env: &Environment, tables: &OfflineTables, use_bar: bool) -> Result<Block> {
    tables.check_env(env)?;
    let d = tables.dim;
    let cells = tables.cell_count();
    let n = cells as f64;
    let mean = tables.moments.mean;
    let eff = tables.effective_circulant();
    let linear = tables.linear_coefficient(use_bar);
    let mut out = zero_block(d);
    for k in 0..cells {
        let ck = unit_coords(k, tables.n, d);
        let xk = env.cells[k] - mean;
        for j in 0..cells {
            let cj = unit_coords(j, tables.n, d);
            let delta: Vec<usize> = ck.iter().zip(&cj).map(|(&a, &b)| (b + tables.n - a) % tables.n).collect();
            add_into(&mut out, &eff[unit_index(&delta, tables.n)], xk * (env.cells[j] - mean) / n);
        }
        add_into(&mut out, &linear, mean * xk / n);
    }
    Ok(out)
}

/// Euclidean norm over `(p, a)` of the second-order condition mismatch.
pub fn sqs2_error(env: &Environment, tables: &OfflineTables) -> Result<f64> {
    sqs2_error_with(env, tables, false)
}

/// As [`sqs2_error`], optionally with the linear coefficient that omits the
/// unit-cell corrector (valid when the first-order condition holds exactly).
pub fn sqs2_error_with(env: &Environment, tables: &OfflineTables, use_bar: bool) -> Result<f64> {
    let lhs = sqs2_lhs(env, tables, use_bar)?;
    Ok(lhs.iter().zip(&tables.rhs2).map(|(l, r)| (l - r) * (l - r)).sum::<f64>().sqrt())
}

/// Relative L2 mismatch between the directly solved first-order corrector
/// gradient and its superposition of translated unit responses.
pub fn superposition_check(
    spec: &FieldSpec,
    env: &Environment,
    tables: &OfflineTables,
    p: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    tables.check_env(env)?;
    let d = spec.dim();
    let (n, r) = (tables.n, tables.r);
    let lattice = Lattice::new(d, n * r, 1.0 / r as f64);
    let grid0 = CoefficientGrid::constant(lattice, spec.c0())?;
    let op = Operator::new(&grid0, BoundaryCondition::Periodic);

    let y = crate::grid::perturbation_diagonals(spec, env, r)?;
    let direct = op.face_gradient(&solve_flux_problem(&op, &first_order_source(&op, &y, p), opts)?.w);

    let unit_lattice = Lattice::new(d, r, 1.0 / r as f64);
    let unit_grid = CoefficientGrid::constant(unit_lattice, spec.c0())?;
    let g_bar = Operator::new(&unit_grid, BoundaryCondition::Periodic).face_gradient(&tables.u1bar[p]);
    let g_phi = op.face_gradient(&tables.phi1n[p]);
    let mean = tables.moments.mean;

    let mut num = 0.0;
    let mut den = 0.0;
    let cells = tables.cell_count();
    for c in 0..lattice.len() {
        let fine = lattice.coords(c);
        let local: Vec<usize> = (0..d).map(|a| fine[a] % r).collect();
        let local_idx = unit_lattice.index(&local);
        for a in 0..d {
            let mut sup = mean * g_bar.up[a][local_idx];
            for k in 0..cells {
                let xk = env.cells[k] - mean;
                if xk == 0.0 {
                    continue;
                }
                let ck = unit_coords(k, n, d);
                let shifted: Vec<usize> = (0..d).map(|b| (fine[b] + lattice.side - ck[b] * r) % lattice.side).collect();
                sup += xk * g_phi.up[a][lattice.index(&shifted)];
            }
            let diff = direct.up[a][c] - sup;
            num += diff * diff;
            den += direct.up[a][c] * direct.up[a][c];
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

/// Score normalizers: standard deviations of each criterion over a pilot sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Normalizers {
    /// Empirical standard deviations of the two criteria.
    pub fn from_pilot(err1: &[f64], err2: &[f64]) -> Self {
        let sd = |v: &[f64]| crate::stats::mean_variance(v).map_or(0.0, |(_, var)| var.sqrt());
        Normalizers { sigma1: sd(err1), sigma2: sd(err2) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqsScore {
    pub seed: u64,
    pub err1: f64,
    pub err2: f64,
    pub combined: f64,
}

/// `w err1 / s1 + (1 - w) err2 / s2`; falls back to the unnormalized
/// weighted sum when either normalizer vanishes.
pub fn combined_score(err1: f64, err2: f64, weight: f64, normalizers: Option<&Normalizers>) -> f64 {
    match normalizers {
        Some(n) if n.sigma1 > 0.0 && n.sigma2 > 0.0 => weight * err1 / n.sigma1 + (1.0 - weight) * err2 / n.sigma2,
        _ => weight * err1 + (1.0 - weight) * err2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{law_moments, sample_environment, sample_environment_sqs1_exact, DomainSpec};
    use approx::assert_relative_eq;

    fn tables(spec: &FieldSpec, n: usize, r: usize) -> OfflineTables {
        let mut cfg = OfflineConfig::new(n, r);
        cfg.solver = SolverOptions::with_tol(1e-13);
        build_offline_tables(spec, &law_moments(spec), &cfg).unwrap()
    }

    #[test]
    fn one_dimensional_whole_space_entry() {
        let spec = FieldSpec::checkerboard(1, 0.5).unwrap();
        for r in [1, 2, 4] {
            let t = tables(&spec, 4, r);
            let l = (2 * t.radius + 1) as f64;
            assert_relative_eq!(t.effective_i_inf(&[0])[0], -1.0 + 1.0 / l, epsilon = 1e-8);
            assert_relative_eq!(t.rhs2[0], -1.0 + 1.0 / l, epsilon = 1e-8);
        }
    }

    #[test]
    fn fft_and_direct_forms_agree() {
        let spec = FieldSpec::new(
            2,
            0.3,
            vec![1.0, 2.0],
            crate::field::UnitCoefficient::Table { sub: 2, diags: vec![vec![1.0, 0.5], vec![0.2, 1.0], vec![0.7, 0.7], vec![1.0, 1.5]] },
            crate::field::CellLaw::Bernoulli { q: 0.7 },
        )
        .unwrap();
        let t = tables(&spec, 4, 2);
        for seed in 0..5 {
            let env = sample_environment(&spec, &DomainSpec::new(4, 2).unwrap(), seed).unwrap();
            for bar in [false, true] {
                let fast = sqs2_lhs(&env, &t, bar).unwrap();
                let slow = sqs2_lhs_direct(&env, &t, bar).unwrap();
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn bar_coefficient_is_equivalent_under_exact_balance() {
        let spec = FieldSpec::checkerboard(2, 0.5).unwrap();
        let t = tables(&spec, 4, 2);
        let env = sample_environment_sqs1_exact(&spec, &DomainSpec::new(4, 2).unwrap(), 8).unwrap();
        assert_eq!(sqs1_error(&env, &t.moments), 0.0);
        let a = sqs2_error_with(&env, &t, false).unwrap();
        let b = sqs2_error_with(&env, &t, true).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn combined_score_forms() {
        let n = Normalizers { sigma1: 2.0, sigma2: 4.0 };
        assert_relative_eq!(combined_score(0.0, 4.0, 0.5, Some(&n)), 0.5);
        assert_relative_eq!(combined_score(2.0, 4.0, 0.5, Some(&n)), 1.0);
        assert!(combined_score(1.0, 5.0, 0.5, Some(&n)) > combined_score(1.0, 4.0, 0.5, Some(&n)));
        let zero = Normalizers { sigma1: 0.0, sigma2: 1.0 };
        assert_relative_eq!(combined_score(1.0, 3.0, 0.25, Some(&zero)), 2.5);
    }
}
