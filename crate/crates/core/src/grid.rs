//! Fine cell-centered grids and per-cell diagonal coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Environment, FieldSpec};

/// A cubic grid of `side^d` cells of width `h`, row-major with the last axis fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub side: usize,
    pub h: f64,
}

impl Lattice {
    pub fn new(dim: usize, side: usize, h: f64) -> Self {
        Lattice { dim, side, h }
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coord(&self, c: usize, axis: usize) -> usize {
        (c / self.stride(axis)) % self.side
    }

    pub fn coords(&self, c: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for (a, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.coord(c, a);
        }
        out
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords[..self.dim].iter().fold(0, |acc, &x| acc * self.side + x)
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Total volume of the box.
    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    /// Upper neighbor along `axis`, wrapping around when `periodic`.
    pub fn up(&self, c: usize, axis: usize, periodic: bool) -> Option<usize> {
        let s = self.stride(axis);
        if self.coord(c, axis) + 1 < self.side {
            Some(c + s)
        } else if periodic && self.side > 1 {
            Some(c + s - self.side * s)
        } else {
            None
        }
    }
}

/// Values attached to cell faces, indexed by the owning cell.
///
/// `up[a][c]` lives on the upper face of cell `c` along axis `a` (the
/// wrap-around face for periodic grids, a boundary face on the last layer
/// otherwise). `low_bnd[a][c]` lives on the lower boundary face and is only
/// meaningful for cells on the first layer of a non-periodic grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceField {
    pub up: Vec<Vec<f64>>,
    pub low_bnd: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(lattice: &Lattice) -> Self {
        let n = lattice.len();
        FaceField {
            up: vec![vec![0.0; n]; lattice.dim],
            low_bnd: vec![vec![0.0; n]; lattice.dim],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridProvenance {
    pub cells_per_side: usize,
    pub r: usize,
    pub seed: u64,
}

/// Diagonal coefficient per fine cell, stored as `diag[c * d + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientGrid {
    pub lattice: Lattice,
    pub diag: Vec<f64>,
    pub provenance: Option<GridProvenance>,
}

impl CoefficientGrid {
    pub fn from_diagonals(lattice: Lattice, diag: Vec<f64>) -> Result<Self> {
        if diag.len() != lattice.len() * lattice.dim {
            return Err(Error::InvalidArgument(format!(
                "coefficient array has {} entries, expected {}",
                diag.len(),
                lattice.len() * lattice.dim
            )));
        }
        if diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("coefficient grid must be positive definite".into()));
        }
        Ok(CoefficientGrid { lattice, diag, provenance: None })
    }

    /// Grid with the same diagonal on every cell.
    pub fn constant(lattice: Lattice, value: &[f64]) -> Result<Self> {
        let diag = (0..lattice.len()).flat_map(|_| value.iter().copied()).collect();
        Self::from_diagonals(lattice, diag)
    }

    #[inline]
    pub fn coef(&self, c: usize, axis: usize) -> f64 {
        self.diag[c * self.lattice.dim + axis]
    }

    /// Smallest and largest eigenvalue over all cells.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        self.diag
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Arithmetic mean of the coefficient along `axis`.
    pub fn arithmetic_mean(&self, axis: usize) -> f64 {
        let n = self.lattice.len();
        (0..n).map(|c| self.coef(c, axis)).sum::<f64>() / n as f64
    }

    /// Harmonic mean of the coefficient along `axis`.
    pub fn harmonic_mean(&self, axis: usize) -> f64 {
        let n = self.lattice.len();
        n as f64 / (0..n).map(|c| 1.0 / self.coef(c, axis)).sum::<f64>()
    }
}

/// Unit cell containing fine cell `c` of a grid with `r` fine cells per unit edge.
pub fn unit_cell_of(lattice: &Lattice, r: usize, c: usize) -> usize {
    let cells = lattice.side / r;
    (0..lattice.dim).fold(0, |acc, a| acc * cells + lattice.coord(c, a) / r)
}

/// Sub-cell index of fine cell `c` inside a unit-cell table with `sub` cells per edge.
pub fn sub_index_of(lattice: &Lattice, r: usize, sub: usize, c: usize) -> usize {
    (0..lattice.dim).fold(0, |acc, a| acc * sub + (lattice.coord(c, a) % r) * sub / r)
}

/// Check that `r` fine cells per unit edge resolve the `C1` table exactly.
pub fn check_resolution(spec: &FieldSpec, r: usize) -> Result<()> {
    let sub = spec.c1().subdivision();
    if r == 0 || !r.is_multiple_of(sub) {
        return Err(Error::UnresolvedCoefficientTable { r, sub });
    }
    Ok(())
}

/// Sample the piecewise-constant coefficient at the center of every fine cell.
pub fn discretize(spec: &FieldSpec, env: &Environment, r: usize) -> Result<CoefficientGrid> {
    check_resolution(spec, r)?;
    if spec.dim() != env.domain.dim {
        return Err(Error::InvalidDomain("environment dimension does not match field".into()));
    }
    let d = spec.dim();
    let lattice = Lattice::new(d, env.domain.n * r, 1.0 / r as f64);
    let sub = spec.c1().subdivision();
    let mut diag = Vec::with_capacity(lattice.len() * d);
    for c in 0..lattice.len() {
        let x = env.cells[unit_cell_of(&lattice, r, c)];
        let c1 = spec.c1().diag(sub_index_of(&lattice, r, sub, c));
        for a in 0..d {
            diag.push(spec.c0()[a] + spec.eta() * x * c1[a]);
        }
    }
    let mut grid = CoefficientGrid::from_diagonals(lattice, diag)?;
    grid.provenance = Some(GridProvenance { cells_per_side: env.domain.n, r, seed: env.seed });
    Ok(grid)
}

/// Per-fine-cell `C1` diagonal weighted by the cell value: `X_{k(c)} * C1(c)`.
pub fn perturbation_diagonals(spec: &FieldSpec, env: &Environment, r: usize) -> Result<Vec<f64>> {
    check_resolution(spec, r)?;
    let d = spec.dim();
    let lattice = Lattice::new(d, env.domain.n * r, 1.0 / r as f64);
    let sub = spec.c1().subdivision();
    let mut out = Vec::with_capacity(lattice.len() * d);
    for c in 0..lattice.len() {
        let x = env.cells[unit_cell_of(&lattice, r, c)];
        let c1 = spec.c1().diag(sub_index_of(&lattice, r, sub, c));
        out.extend(c1.iter().map(|v| x * v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CellLaw, DomainSpec, UnitCoefficient};

    #[test]
    fn one_dimensional_placement() {
        let spec = FieldSpec::checkerboard(1, 0.5).unwrap();
        let env = Environment { domain: DomainSpec::new(2, 1).unwrap(), cells: vec![1.0, -1.0], seed: 0 };
        let grid = discretize(&spec, &env, 2).unwrap();
        assert_eq!(grid.diag, vec![1.5, 1.5, 0.5, 0.5]);
        assert_eq!(grid.lattice.h, 0.5);
    }

    #[test]
    fn neighbors_wrap_only_when_periodic() {
        let l = Lattice::new(2, 3, 1.0);
        assert_eq!(l.up(2, 1, true), Some(0));
        assert_eq!(l.up(2, 1, false), None);
        assert_eq!(l.up(7, 0, true), Some(1));
        assert_eq!(l.up(1, 0, false), Some(4));
        assert_eq!(l.index(&l.coords(5)), 5);
    }

    #[test]
    fn table_needs_matching_resolution() {
        let table = UnitCoefficient::Table { sub: 2, diags: vec![vec![1.0]; 2] };
        let spec = FieldSpec::new(1, 0.2, vec![2.0], table, CellLaw::Uniform).unwrap();
        let env = Environment { domain: DomainSpec::new(1, 1).unwrap(), cells: vec![1.0], seed: 0 };
        assert!(matches!(discretize(&spec, &env, 3), Err(Error::UnresolvedCoefficientTable { r: 3, sub: 2 })));
        assert!(discretize(&spec, &env, 4).is_ok());
    }

    #[test]
    fn table_lookup_by_subcell() {
        let table = UnitCoefficient::Table { sub: 2, diags: vec![vec![1.0], vec![0.5]] };
        let spec = FieldSpec::new(1, 0.5, vec![2.0], table, CellLaw::Uniform).unwrap();
        let env = Environment { domain: DomainSpec::new(1, 1).unwrap(), cells: vec![1.0], seed: 0 };
        let grid = discretize(&spec, &env, 4).unwrap();
        assert_eq!(grid.diag, vec![2.5, 2.5, 2.25, 2.25]);
    }
}
