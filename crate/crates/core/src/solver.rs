//! Cell-centered finite volume corrector solves and apparent tensors.
//!
//! Faces carry the harmonic mean of the two adjacent cell coefficients along
//! the face normal. Unknowns live at cell centers; the linear system
//! `K w = rhs` is symmetric positive (semi-)definite and solved with Jacobi
//! preconditioned conjugate gradients.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoefficientGrid, FaceField, Lattice};

static LINEAR_SOLVES: AtomicUsize = AtomicUsize::new(0);

/// Number of linear systems solved by this process so far.
pub fn linear_solve_count() -> usize {
    LINEAR_SOLVES.load(Ordering::Relaxed)
}

const NONE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Periodic,
    Dirichlet,
    Neumann,
}

impl BoundaryCondition {
    pub fn label(self) -> &'static str {
        match self {
            BoundaryCondition::Periodic => "periodic",
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
        }
    }

    fn has_null_space(self) -> bool {
        self != BoundaryCondition::Dirichlet
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    /// Iteration cap; `None` means `50 * side`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, max_iter: None }
    }
}

pub fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Assembled finite volume operator for one coefficient grid and boundary condition.
#[derive(Clone, Debug)]
pub struct Operator {
    lattice: Lattice,
    bc: BoundaryCondition,
    up: Vec<Vec<usize>>,
    /// Face transmissibility, `0` where no interior face exists.
    trans: Vec<Vec<f64>>,
    /// Boundary contributions to the diagonal (Dirichlet only).
    bdiag: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl Operator {
    pub fn new(grid: &CoefficientGrid, bc: BoundaryCondition) -> Self {
        let lattice = grid.lattice;
        let n = lattice.len();
        let d = lattice.dim;
        let periodic = bc == BoundaryCondition::Periodic;
        let h2 = lattice.h * lattice.h;
        let mut up = vec![vec![NONE; n]; d];
        let mut trans = vec![vec![0.0; n]; d];
        let mut bdiag = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for a in 0..d {
            for c in 0..n {
                match lattice.up(c, a, periodic) {
                    Some(u) => {
                        let t = harmonic(grid.coef(c, a), grid.coef(u, a));
                        up[a][c] = u;
                        trans[a][c] = t;
                        diag[c] += t / h2;
                        diag[u] += t / h2;
                    }
                    None if bc == BoundaryCondition::Dirichlet => {
                        bdiag[c] += 2.0 * grid.coef(c, a) / h2;
                    }
                    None => {}
                }
                if bc == BoundaryCondition::Dirichlet && lattice.coord(c, a) == 0 {
                    bdiag[c] += 2.0 * grid.coef(c, a) / h2;
                }
            }
        }
        let inv_diag = diag
            .iter()
            .zip(&bdiag)
            .map(|(x, b)| {
                let v = x + b;
                if v > 0.0 {
                    1.0 / v
                } else {
                    1.0
                }
            })
            .collect();
        Operator { lattice, bc, up, trans, bdiag, inv_diag }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Upper neighbor along `axis`, if the face between them is interior.
    pub fn up_neighbor(&self, c: usize, axis: usize) -> Option<usize> {
        let u = self.up[axis][c];
        (u != NONE).then_some(u)
    }

    pub fn transmissibility(&self, c: usize, axis: usize) -> f64 {
        self.trans[axis][c]
    }

    /// `y = K x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let inv_h2 = 1.0 / (self.lattice.h * self.lattice.h);
        for ((yc, xc), b) in y.iter_mut().zip(x).zip(&self.bdiag) {
            *yc = b * xc;
        }
        for (ups, ts) in self.up.iter().zip(&self.trans) {
            for c in 0..x.len() {
                let u = ups[c];
                if u != NONE {
                    let f = ts[c] * inv_h2 * (x[c] - x[u]);
                    y[c] += f;
                    y[u] -= f;
                }
            }
        }
    }

    /// Right-hand side `(1/h) sum_a (s_up - s_low)` for prescribed face fluxes `s`.
    pub fn rhs(&self, sources: &FaceField) -> Vec<f64> {
        let n = self.lattice.len();
        let inv_h = 1.0 / self.lattice.h;
        let mut b = vec![0.0; n];
        let periodic = self.bc == BoundaryCondition::Periodic;
        for a in 0..self.lattice.dim {
            for c in 0..n {
                let s = sources.up[a][c] * inv_h;
                b[c] += s;
                if let Some(u) = self.up_neighbor(c, a) {
                    b[u] -= s;
                }
                if !periodic && self.lattice.coord(c, a) == 0 {
                    b[c] -= sources.low_bnd[a][c] * inv_h;
                }
            }
        }
        b
    }

    /// Face fluxes of the solution `w` for prescribed fluxes `s`.
    pub fn fluxes(&self, grid: &CoefficientGrid, w: &[f64], sources: &FaceField) -> FaceField {
        let h = self.lattice.h;
        let n = self.lattice.len();
        let mut q = FaceField::zeros(&self.lattice);
        for a in 0..self.lattice.dim {
            for c in 0..n {
                let s = sources.up[a][c];
                q.up[a][c] = match self.up_neighbor(c, a) {
                    Some(u) => s + self.trans[a][c] * (w[u] - w[c]) / h,
                    None => match self.bc {
                        BoundaryCondition::Dirichlet => s - 2.0 * grid.coef(c, a) * w[c] / h,
                        _ => s,
                    },
                };
                if self.bc != BoundaryCondition::Periodic && self.lattice.coord(c, a) == 0 {
                    let s = sources.low_bnd[a][c];
                    q.low_bnd[a][c] = match self.bc {
                        BoundaryCondition::Dirichlet => s + 2.0 * grid.coef(c, a) * w[c] / h,
                        _ => s,
                    };
                }
            }
        }
        q
    }

    /// Face differences of `w` (`dw / dx` across each face, with `w = 0`
    /// outside a Dirichlet box and `0` on Neumann boundary faces).
    pub fn face_gradient(&self, w: &[f64]) -> FaceField {
        let h = self.lattice.h;
        let mut g = FaceField::zeros(&self.lattice);
        for a in 0..self.lattice.dim {
            for c in 0..w.len() {
                g.up[a][c] = match self.up_neighbor(c, a) {
                    Some(u) => (w[u] - w[c]) / h,
                    None if self.bc == BoundaryCondition::Dirichlet => -2.0 * w[c] / h,
                    None => 0.0,
                };
                if self.bc == BoundaryCondition::Dirichlet && self.lattice.coord(c, a) == 0 {
                    g.low_bnd[a][c] = 2.0 * w[c] / h;
                }
            }
        }
        g
    }
}

/// Output of one linear solve.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub w: Vec<f64>,
    pub iterations: usize,
    /// True relative residual `|b - K w| / |b|`.
    pub residual: f64,
}

fn project_mean_zero(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `K w = rhs(sources)` by preconditioned conjugate gradients.
pub fn solve_flux_problem(op: &Operator, sources: &FaceField, opts: &SolverOptions) -> Result<LinearSolution> {
    let b = op.rhs(sources);
    solve_linear(op, b, opts)
}

/// Solve `K w = b`. For periodic and Neumann problems `b` and every
/// residual are projected onto mean-zero vectors, and `w` has zero mean.
pub fn solve_linear(op: &Operator, mut b: Vec<f64>, opts: &SolverOptions) -> Result<LinearSolution> {
    LINEAR_SOLVES.fetch_add(1, Ordering::Relaxed);
    let n = b.len();
    let project = op.bc.has_null_space();
    if project {
        project_mean_zero(&mut b);
    }
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(LinearSolution { w: x, iterations: 0, residual: 0.0 });
    }
    let max_iter = opts.max_iter.unwrap_or(50 * op.lattice.side).max(1);
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&op.inv_diag).map(|(r, m)| r * m).collect();
    if project {
        project_mean_zero(&mut z);
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if project {
            project_mean_zero(&mut r);
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= opts.tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * op.inv_diag[i];
        }
        if project {
            project_mean_zero(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if project {
        project_mean_zero(&mut x);
    }
    op.apply(&x, &mut ap);
    let mut true_res: Vec<f64> = b.iter().zip(&ap).map(|(b, k)| b - k).collect();
    if project {
        project_mean_zero(&mut true_res);
    }
    let residual = dot(&true_res, &true_res).sqrt() / bnorm;
    if rel > opts.tol && residual > opts.tol {
        return Err(Error::NonConvergence { iterations, residual });
    }
    Ok(LinearSolution { w: x, iterations, residual })
}

/// Discrete corrector for one macroscopic gradient `p`.
#[derive(Clone, Debug)]
pub struct CorrectorSolution {
    pub p: Vec<f64>,
    pub bc: BoundaryCondition,
    /// Cell values, zero mean for periodic and Neumann problems.
    pub w: Vec<f64>,
    /// Normal component of `A (p + grad w)` on every face.
    pub flux: FaceField,
    /// Normal component of `grad w` on every face.
    pub grad: FaceField,
    pub residual: f64,
    pub iterations: usize,
}

impl CorrectorSolution {
    /// Cell-centered gradient reconstructed from the face fluxes:
    /// `(q_low + q_up) / (2 A_c) - p` along each axis, exact in 1D.
    pub fn cell_gradient(&self, grid: &CoefficientGrid) -> Vec<f64> {
        let lattice = grid.lattice;
        let d = lattice.dim;
        let periodic = self.bc == BoundaryCondition::Periodic;
        let mut out = vec![0.0; lattice.len() * d];
        for a in 0..d {
            let s = lattice.stride(a);
            for c in 0..lattice.len() {
                let first = lattice.coord(c, a) == 0;
                let lower = if first && !periodic {
                    self.flux.low_bnd[a][c]
                } else if first {
                    self.flux.up[a][c + (lattice.side - 1) * s]
                } else {
                    self.flux.up[a][c - s]
                };
                out[c * d + a] = 0.5 * (lower + self.flux.up[a][c]) / grid.coef(c, a) - self.p[a];
            }
        }
        out
    }
}

/// Prescribed face fluxes for the corrector with macroscopic gradient `p`.
fn corrector_sources(op: &Operator, grid: &CoefficientGrid, p: &[f64]) -> FaceField {
    let lattice = op.lattice;
    let mut s = FaceField::zeros(&lattice);
    for a in 0..lattice.dim {
        if p[a] == 0.0 {
            continue;
        }
        for c in 0..lattice.len() {
            s.up[a][c] = match op.up_neighbor(c, a) {
                Some(_) => op.transmissibility(c, a) * p[a],
                None => match op.bc {
                    BoundaryCondition::Neumann => p[a],
                    _ => grid.coef(c, a) * p[a],
                },
            };
            if op.bc != BoundaryCondition::Periodic && lattice.coord(c, a) == 0 {
                s.low_bnd[a][c] = match op.bc {
                    BoundaryCondition::Neumann => p[a],
                    _ => grid.coef(c, a) * p[a],
                };
            }
        }
    }
    s
}

/// Solve `-div(A (p + grad w)) = 0` with the operator's boundary condition.
pub fn solve_corrector_with(
    op: &Operator,
    grid: &CoefficientGrid,
    p: &[f64],
    opts: &SolverOptions,
) -> Result<CorrectorSolution> {
    let lattice = op.lattice;
    if p.len() != lattice.dim {
        return Err(Error::InvalidArgument(format!("direction has {} entries, expected {}", p.len(), lattice.dim)));
    }
    let sources = corrector_sources(op, grid, p);
    let sol = solve_flux_problem(op, &sources, opts)?;
    let flux = op.fluxes(grid, &sol.w, &sources);
    let mut grad = op.face_gradient(&sol.w);
    if op.bc == BoundaryCondition::Neumann {
        // On Neumann faces the flux is prescribed, so the gradient follows from it.
        for a in 0..lattice.dim {
            for c in 0..lattice.len() {
                if op.up_neighbor(c, a).is_none() {
                    grad.up[a][c] = p[a] / grid.coef(c, a) - p[a];
                }
                if lattice.coord(c, a) == 0 {
                    grad.low_bnd[a][c] = p[a] / grid.coef(c, a) - p[a];
                }
            }
        }
    }
    Ok(CorrectorSolution {
        p: p.to_vec(),
        bc: op.bc,
        w: sol.w,
        flux,
        grad,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

pub fn solve_corrector(
    grid: &CoefficientGrid,
    p: &[f64],
    bc: BoundaryCondition,
    opts: &SolverOptions,
) -> Result<CorrectorSolution> {
    solve_corrector_with(&Operator::new(grid, bc), grid, p, opts)
}

/// Volume average of a face field along `axis`. Interior and periodic faces
/// carry weight `h^d`, boundary half faces `h^d / 2`.
pub fn face_average(lattice: &Lattice, bc: BoundaryCondition, field: &FaceField, axis: usize) -> f64 {
    let periodic = bc == BoundaryCondition::Periodic;
    let mut sum = 0.0;
    for c in 0..lattice.len() {
        let last = lattice.coord(c, axis) + 1 == lattice.side;
        sum += if last && !periodic { 0.5 * field.up[axis][c] } else { field.up[axis][c] };
        if !periodic && lattice.coord(c, axis) == 0 {
            sum += 0.5 * field.low_bnd[axis][c];
        }
    }
    sum / lattice.len() as f64
}

/// One apparent homogenized tensor with its solver report.
#[derive(Clone, Debug)]
pub struct HomogenizedSample {
    pub tensor: DMatrix<f64>,
    pub bc: BoundaryCondition,
    pub seed: Option<u64>,
    pub cells_per_side: usize,
    pub r: usize,
    pub wall_ms: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `|T - T^t| / |T|` before symmetrization.
    pub asymmetry: f64,
}

/// Assemble the apparent tensor from one corrector per canonical direction.
pub fn homogenized_tensor(
    grid: &CoefficientGrid,
    solutions: &[CorrectorSolution],
    bc: BoundaryCondition,
) -> Result<HomogenizedSample> {
    let lattice = grid.lattice;
    let d = lattice.dim;
    if solutions.len() != d {
        return Err(Error::InvalidArgument(format!("need {d} corrector solutions, got {}", solutions.len())));
    }
    let mut raw = DMatrix::zeros(d, d);
    for (j, sol) in solutions.iter().enumerate() {
        if sol.bc != bc {
            return Err(Error::InvalidArgument("corrector boundary conditions differ".into()));
        }
        let scale = sol.p[j];
        if scale == 0.0 || sol.p.iter().enumerate().any(|(i, &v)| i != j && v != 0.0) {
            return Err(Error::InvalidArgument(format!("solution {j} is not along e_{j}")));
        }
        for a in 0..d {
            raw[(a, j)] = match bc {
                BoundaryCondition::Neumann => {
                    let g = face_average(&lattice, bc, &sol.grad, a);
                    (if a == j { scale } else { 0.0 } + g) / scale
                }
                _ => face_average(&lattice, bc, &sol.flux, a) / scale,
            };
        }
    }
    if bc == BoundaryCondition::Neumann {
        raw = raw.try_inverse().ok_or(Error::SingularNeumann)?;
    }
    let sym = (&raw + raw.transpose()) * 0.5;
    let norm = raw.norm();
    let asymmetry = if norm > 0.0 { (&raw - raw.transpose()).norm() / norm } else { 0.0 };
    let provenance = grid.provenance;
    Ok(HomogenizedSample {
        tensor: sym,
        bc,
        seed: provenance.map(|p| p.seed),
        cells_per_side: provenance.map_or(0, |p| p.cells_per_side),
        r: provenance.map_or(0, |p| p.r),
        wall_ms: 0.0,
        iterations: solutions.iter().map(|s| s.iterations).sum(),
        residual: solutions.iter().map(|s| s.residual).fold(0.0, f64::max),
        asymmetry,
    })
}

/// Solve the `d` correctors and assemble the tensor, timing the whole batch.
pub fn compute_homogenized(
    grid: &CoefficientGrid,
    bc: BoundaryCondition,
    opts: &SolverOptions,
) -> Result<HomogenizedSample> {
    let start = Instant::now();
    let op = Operator::new(grid, bc);
    let d = grid.lattice.dim;
    let solutions = (0..d)
        .map(|j| {
            let mut p = vec![0.0; d];
            p[j] = 1.0;
            solve_corrector_with(&op, grid, &p, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sample = homogenized_tensor(grid, &solutions, bc)?;
    sample.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(sample)
}
