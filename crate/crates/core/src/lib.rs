//! Special quasirandom structure (SQS) selection for Monte Carlo
//! estimation of homogenized coefficients of random lattice media.
//!
//! The crate covers the whole pipeline: random checkerboard-type fields,
//! finite volume corrector solves, the offline tables behind the SQS
//! criteria, the three sampling algorithms and their statistics, plus a
//! small lab of exactly solvable Gaussian models.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod error;
pub mod field;
pub mod grid;
pub mod lattice_fft;
pub mod par;
pub mod perturbation;
pub mod quadrature;
pub mod sampler;
pub mod solver;
pub mod sqs;
pub mod stats;

pub use error::{Error, Result};
