//! Convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀP x + qᵀx
//! subject to  l <= A x <= u
//! ```
//!
//! solved either by operator splitting (ADMM) with a banded Cholesky
//! factorization of the reduced KKT system, or by a primal-dual interior point
//! method on a banded quasi-definite system. MPC problems ordered stage by
//! stage have a narrow band, so each iteration is linear in the horizon.

mod admm;
mod banded;
mod ipm;
mod sparse;

pub use admm::{solve, solve_warm, QpMethod, QpProblem, QpSettings, QpSolution, QpStatus};
pub use banded::{BandedCholesky, BandedLdl, BandedMatrix};
pub use sparse::SparseMatrix;
