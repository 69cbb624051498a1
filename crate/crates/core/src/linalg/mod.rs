//! Dense and sparse factorization kernels shared by every other module.

mod dense;
mod sparse;

pub use dense::{cholesky_spd, sym_eig, CholeskyFactor, DenseSymMatrix, SymEig};
pub use sparse::{
    ldl_quasidef, ldl_with_order, minimum_degree_order, sparse_cholesky, QuasiDefFactor,
    SparseCholesky, SparseSymBuilder, SparseSymMatrix,
};

