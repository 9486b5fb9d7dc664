//! Stochastic Hessian and preconditioner fitting.
//!
//! Fitters consume probe/response pairs `(v, h ≈ Hv)` and track a
//! preconditioner `P ≈ (H² + E[εεᵀ])^{-1/2}` in one of several
//! parameterizations. The [`psgd`] module wires them into an optimizer.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classic_fit;
pub mod crit;
pub mod error;
pub mod lie_fit;
pub mod matkit;
pub mod matrix;
pub mod precond;
pub mod psgd;
pub mod rng;
pub mod sparse_fit;

pub use error::{Error, Result};
pub use matrix::Matrix;
