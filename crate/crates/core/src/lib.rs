//! Rank-constrained ascent for the elliptope SDP
//! `max <A, X>` subject to `X >= 0`, `X_ii = 1`.
//!
//! The SDP is replaced by the smooth problem of maximizing
//! `F_A(s) = sum_ij A_ij <s_i, s_j>` over `n` unit vectors in `R^k`. This crate
//! solves that problem, checks the optimality conditions of the points it
//! finds, and compares their value with a certified reference for the SDP.

pub mod certify;
pub mod cli;
pub mod error;
pub mod instances;
pub mod manifold;
pub mod refsdp;
pub mod rng;
pub mod solver;
pub mod symmat;

pub use error::{Error, Result};
pub use manifold::{SpherePoint, TangentVector};
pub use symmat::SymMatrix;
