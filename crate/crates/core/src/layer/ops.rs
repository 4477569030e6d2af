//! Pointwise and per-timestep pieces shared by the forward and backward
//! passes.

use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{next_pow2, DenseMatrix, FftPlan};

pub const GELU_C: f64 = 0.7978845608;
const GELU_K: f64 = 0.044715;
pub const NORM_EPS: f64 = 1e-5;

/// Tanh-form GeLU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[derive(Debug, Clone)]
pub(crate) struct NormTape {
    pub xhat: DenseMatrix,
    pub inv_std: Vec<f64>,
}

/// Normalize each row (timestep) over its `H` features.
pub(crate) fn layer_norm(x: &DenseMatrix, gain: &[f64], bias: &[f64]) -> (DenseMatrix, NormTape) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut xhat = DenseMatrix::zeros(rows, cols);
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for t in 0..rows {
        let r = x.row(t);
        let mean = r.iter().sum::<f64>() / cols as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(is);
        for j in 0..cols {
            let z = (r[j] - mean) * is;
            xhat[(t, j)] = z;
            out[(t, j)] = gain[j] * z + bias[j];
        }
    }
    (out, NormTape { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward(tape: &NormTape, gain: &[f64], dout: &DenseMatrix) -> (DenseMatrix, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (dout.rows(), dout.cols());
    let mut dx = DenseMatrix::zeros(rows, cols);
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    let mut dz = vec![0.0; cols];
    for t in 0..rows {
        let xh = tape.xhat.row(t);
        let d = dout.row(t);
        for j in 0..cols {
            dgain[j] += d[j] * xh[j];
            dbias[j] += d[j];
            dz[j] = d[j] * gain[j];
        }
        let mean_dz = dz.iter().sum::<f64>() / cols as f64;
        let mean_dzx = dz.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
        let out = dx.row_mut(t);
        for j in 0..cols {
            out[j] = tape.inv_std[t] * (dz[j] - mean_dz - xh[j] * mean_dzx);
        }
    }
    (dx, dgain, dbias)
}

/// FFT plan sized for causal convolution of length-`len` sequences.
pub(crate) struct ConvPlan {
    plan: FftPlan,
    len: usize,
}

impl ConvPlan {
    pub fn new(len: usize) -> Result<Self> {
        Ok(Self { plan: FftPlan::new(next_pow2(2 * len.max(1) - 1))?, len })
    }

    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        self.plan.forward_real(x)
    }

    /// `y[t] = sum_{i<=t} a[i] b[t-i]`, first `len` terms.
    pub fn convolve_spectra(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.plan.inverse(&mut buf);
        buf[..self.len].iter().map(|c| c.re).collect()
    }

    /// `r[i] = sum_t a[t+i] b[t]`, first `len` lags.
    pub fn correlate_spectra(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y.conj()).collect();
        self.plan.inverse(&mut buf);
        buf[..self.len].iter().map(|c| c.re).collect()
    }
}
