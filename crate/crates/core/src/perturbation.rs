//! Expansion of the apparent tensor in powers of `eta` around a constant `C0`.
//!
//! With `A = C0 + eta * y` on every fine cell, the harmonic face
//! transmissibility expands as `t0 + eta t1 + eta^2 t2 + O(eta^3)` with
//! `t0 = a`, `t1 = (y1 + y2) / 2` and `t2 = -(y1 - y2)^2 / (4a)`. Collecting
//! powers of `eta` in the discrete flux balance gives two periodic solves with
//! the constant-coefficient operator, and the tensors `A0`, `A1`, `A2`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{Environment, FieldSpec};
use crate::grid::{perturbation_diagonals, CoefficientGrid, FaceField, Lattice};
use crate::solver::{face_average, solve_flux_problem, BoundaryCondition, Operator, SolverOptions};

#[derive(Clone, Debug)]
pub struct PerturbationResult {
    /// Zeroth-order corrector, identically zero for constant `C0`.
    pub w0: Vec<Vec<f64>>,
    /// First-order corrector per direction.
    pub u1: Vec<Vec<f64>>,
    /// Second-order corrector per direction.
    pub u2: Vec<Vec<f64>>,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
}

impl PerturbationResult {
    /// `A0 + eta A1 + eta^2 A2`.
    pub fn truncated(&self, eta: f64) -> DMatrix<f64> {
        &self.a0 + &self.a1 * eta + &self.a2 * (eta * eta)
    }
}

/// First- and second-order face transmissibility terms for the perturbation `y`.
pub(crate) fn face_terms(op: &Operator, c0: &[f64], y: &[f64]) -> (FaceField, FaceField) {
    let lattice = *op.lattice();
    let d = lattice.dim;
    let mut t1 = FaceField::zeros(&lattice);
    let mut t2 = FaceField::zeros(&lattice);
    for a in 0..d {
        for c in 0..lattice.len() {
            if let Some(u) = op.up_neighbor(c, a) {
                let (y1, y2) = (y[c * d + a], y[u * d + a]);
                t1.up[a][c] = 0.5 * (y1 + y2);
                t2.up[a][c] = -(y1 - y2) * (y1 - y2) / (4.0 * c0[a]);
            }
        }
    }
    (t1, t2)
}

fn combine(lattice: &Lattice, f: impl Fn(usize, usize) -> f64) -> FaceField {
    let mut out = FaceField::zeros(lattice);
    for a in 0..lattice.dim {
        for c in 0..lattice.len() {
            out.up[a][c] = f(a, c);
        }
    }
    out
}

/// Solve the perturbation hierarchy on the periodic box for every direction `e_p`.
pub fn solve_perturbation_hierarchy(
    spec: &FieldSpec,
    env: &Environment,
    r: usize,
    opts: &SolverOptions,
) -> Result<PerturbationResult> {
    let d = spec.dim();
    if env.domain.dim != d {
        return Err(Error::InvalidDomain("environment dimension does not match field".into()));
    }
    let lattice = Lattice::new(d, env.domain.n * r, 1.0 / r as f64);
    let c0 = spec.c0();
    let grid0 = CoefficientGrid::constant(lattice, c0)?;
    let op = Operator::new(&grid0, BoundaryCondition::Periodic);
    let y = perturbation_diagonals(spec, env, r)?;
    let (t1, t2) = face_terms(&op, c0, &y);
    let n = lattice.len();

    let mut a1 = DMatrix::zeros(d, d);
    let mut a2 = DMatrix::zeros(d, d);
    let mut u1s = Vec::with_capacity(d);
    let mut u2s = Vec::with_capacity(d);
    for p in 0..d {
        let s1 = combine(&lattice, |a, c| if a == p { t1.up[a][c] } else { 0.0 });
        let u1 = solve_flux_problem(&op, &s1, opts)?.w;
        let g1 = op.face_gradient(&u1);
        let s2 = combine(&lattice, |a, c| {
            t1.up[a][c] * g1.up[a][c] + if a == p { t2.up[a][c] } else { 0.0 }
        });
        let u2 = solve_flux_problem(&op, &s2, opts)?.w;
        let g2 = op.face_gradient(&u2);
        for a in 0..d {
            let first = combine(&lattice, |aa, c| s1.up[aa][c] + c0[aa] * g1.up[aa][c]);
            let second = combine(&lattice, |aa, c| s2.up[aa][c] + c0[aa] * g2.up[aa][c]);
            a1[(a, p)] = face_average(&lattice, BoundaryCondition::Periodic, &first, a);
            a2[(a, p)] = face_average(&lattice, BoundaryCondition::Periodic, &second, a);
        }
        u1s.push(u1);
        u2s.push(u2);
    }
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    Ok(PerturbationResult {
        w0: vec![vec![0.0; n]; d],
        u1: u1s,
        u2: u2s,
        a0: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(c0)),
        a1: sym(a1),
        a2: sym(a2),
    })
}
