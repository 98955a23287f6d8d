//! Numerical toolkit for the Cauchy obstacle problem of semilinear parabolic
//! equations in divergence form, its reflected BSDE representation and the
//! cross-checks between the two.

// `!(x > 0.0)` is used on purpose to reject NaN along with the failing range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod linalg;
pub mod par;
pub mod problem;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod stochastic;
pub mod suite;
pub mod verify;

pub use error::{Error, Result};
