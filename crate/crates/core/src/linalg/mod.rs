//! Sparse storage, a sparse Cholesky factorization and small dense helpers.

mod cholesky;
mod dense;
mod sparse;

pub use cholesky::{CholeskyFactor, Ordering, SymbolicCholesky};
pub use dense::{jittered_cholesky, sample_psd_gaussian, DenseFactor};
pub use sparse::CscMatrix;
