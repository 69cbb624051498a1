//! Primal-dual interior-point SDP solver whose Hessian systems are solved
//! matrix-free by PCG with a low-rank spectral preconditioner, plus
//! matrix-completion instance tooling.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constraints;
pub mod error;
pub mod hessian;
pub mod io;
pub mod ipm;
pub mod linalg;
pub mod matcomp;
pub mod pcg;
pub mod precond;
pub mod scaling;

pub use error::{Error, Result};
