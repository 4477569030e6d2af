//! Dense, diagonal and tridiagonal linear algebra, FFT convolution and
//! truncated power series.

mod dense;
mod fft;
mod poly;
mod svd;
mod tridiag;

pub(crate) use dense::dot;
pub use dense::{dense_matvec, DenseMatrix, DiagonalMatrix, Lu, RealVector};
pub use fft::{causal_convolve, causal_correlate, next_pow2, FftPlan};
pub use poly::{poly_inv_mod, poly_mul, poly_mul_trunc, Polynomial};
pub use svd::{low_rank_factor, offdiag_rank, singular_values};
pub use tridiag::{tridiag_matvec, tridiag_solve, TridiagonalMatrix};
