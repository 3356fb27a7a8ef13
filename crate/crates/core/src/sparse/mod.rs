//! Sparse symmetric positive-definite linear algebra for Gauss–Markov
//! random fields.

mod cholesky;
mod matrix;
mod ordering;
mod sample;
mod selinv;

pub use cholesky::{factorize, CholeskyFactor, SymbolicCholesky, PIVOT_TOLERANCE};
pub use matrix::{SparseMatrix, SparseSymmetric};
pub use ordering::{
    factor_nnz, minimum_degree, natural_dense_last, nested_dissection, reorder, reverse_cuthill_mckee,
    Permutation,
};
pub use sample::{constrain, stream_rng, Kriging};
pub use selinv::SelectedInverse;
