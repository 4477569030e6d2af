//! Convolutional view: Krylov matrix and function, FFT application, the
//! sequential recurrence, and the Woodbury-recursion resolvent.

mod resolvent;

pub use resolvent::{resolvent_kernel_fast, SeriesMatrix};

use crate::disc::DiscreteSSM;
use crate::error::{dim_check, LsslError, Result};
use crate::linalg::{causal_convolve, DenseMatrix, RealVector};

/// Convolution taps `(c A^i b)_{i < L}` for one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovKernel {
    pub taps: RealVector,
    pub channel: usize,
}

impl KrylovKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// `N x L` matrix with column `j = a_bar^j b_bar`.
///
/// Built by doubling: `[K_m, A^m K_m]`, with `A^m` squared each round, so the
/// dependency depth is logarithmic in `L`.
pub fn krylov_matrix(a_bar: &DenseMatrix, b_bar: &[f64], len: usize) -> Result<DenseMatrix> {
    dim_check(a_bar.is_square() && a_bar.rows() == b_bar.len(), || {
        format!("A is {}x{}, B has {} entries", a_bar.rows(), a_bar.cols(), b_bar.len())
    })?;
    if len == 0 {
        return Err(LsslError::InvalidParameter("kernel length must be at least 1".into()));
    }
    let n = b_bar.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(len);
    cols.push(b_bar.to_vec());
    let mut power = a_bar.clone();
    while cols.len() < len {
        let m = cols.len();
        let take = m.min(len - m);
        for j in 0..take {
            let mut next = vec![0.0; n];
            power.matvec_into(&cols[j], &mut next);
            cols.push(next);
        }
        if cols.len() < len {
            power = power.matmul(&power)?;
        }
    }
    Ok(DenseMatrix::from_fn(n, len, |i, j| cols[j][i]))
}

/// Taps `c K` for each row of `c` (`M x N`), reusing one Krylov matrix.
pub fn kernels_from_krylov(krylov: &DenseMatrix, c: &DenseMatrix) -> Result<Vec<KrylovKernel>> {
    dim_check(c.cols() == krylov.rows(), || {
        format!("C has {} columns, Krylov matrix {} rows", c.cols(), krylov.rows())
    })?;
    let taps = c.matmul(krylov)?;
    Ok((0..c.rows())
        .map(|m| KrylovKernel { taps: taps.row(m).into(), channel: m })
        .collect())
}

/// `K_L(A, B, C) = (c A^i b)_{i < L}`.
pub fn krylov_function(a_bar: &DenseMatrix, b_bar: &[f64], c: &[f64], len: usize) -> Result<KrylovKernel> {
    dim_check(c.len() == b_bar.len(), || format!("C has {}, B has {}", c.len(), b_bar.len()))?;
    let k = krylov_matrix(a_bar, b_bar, len)?;
    let row = DenseMatrix::from_vec(1, c.len(), c.to_vec())?;
    Ok(kernels_from_krylov(&k, &row)?.remove(0))
}

/// `y = K * u + d u`.
pub fn apply_convolutional(kernel: &KrylovKernel, d: f64, u: &[f64]) -> Result<RealVector> {
    dim_check(kernel.len() == u.len(), || {
        format!("kernel length {} with input length {}", kernel.len(), u.len())
    })?;
    let mut y = causal_convolve(&kernel.taps, u)?;
    for (yi, ui) in y.iter_mut().zip(u) {
        *yi += d * ui;
    }
    Ok(y)
}

/// Output of the sequential unroll: `y` is `M x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentOutput {
    pub y: DenseMatrix,
    pub x_final: RealVector,
}

/// `x_t = A x_{t-1} + B u_t`, `y_t = C x_t + D u_t`, starting from `x0`.
pub fn apply_recurrent(ssm: &DiscreteSSM, u: &[f64], x0: &[f64]) -> Result<RecurrentOutput> {
    let n = ssm.order();
    dim_check(x0.len() == n, || format!("initial state {} for N = {n}", x0.len()))?;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut y = DenseMatrix::zeros(ssm.channels(), u.len());
    for (t, &ut) in u.iter().enumerate() {
        ssm.a_bar.matvec_into(&x, &mut next);
        for (xi, bi) in next.iter_mut().zip(ssm.b_bar.iter()) {
            *xi += bi * ut;
        }
        std::mem::swap(&mut x, &mut next);
        for m in 0..ssm.channels() {
            y[(m, t)] = crate::linalg::dot(ssm.c.row(m), &x) + ssm.d[m] * ut;
        }
    }
    Ok(RecurrentOutput { y, x_final: x.into() })
}
