//! Sparse and dense linear algebra kernels: CSR storage, pivoted dense and
//! banded LU, reverse Cuthill-McKee ordering, flexible GMRES, and a
//! block-triangular direct solver for operators that are block lower
//! bidiagonal in time.

pub mod banded;
pub mod csr;
pub mod dense;
pub mod direct;
pub mod fgmres;

pub use banded::{rcm_order, BandedLu};
pub use csr::CsrMatrix;
pub use dense::{dense_factorize, dense_solve, DenseBlockFactorization};
pub use direct::{
    block_triangular_direct_solve, block_triangular_factorize, BlockTriangularFactor,
    TimeBlockStructure,
};
pub use fgmres::{fgmres, FgmresOutcome, IdentityPrecond, KrylovConfig, LinOp, Precondition};

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// y += alpha * x.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
