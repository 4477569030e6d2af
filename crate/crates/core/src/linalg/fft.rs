//! FFT plans on power-of-two lengths, and the causal convolution /
//! correlation built on them.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::RealVector;
use crate::error::{dim_check, LsslError, Result};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Forward and inverse transforms for one length.
#[derive(Clone)]
pub struct FftPlan {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("n", &self.n).finish()
    }
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(LsslError::InvalidParameter(format!(
                "FFT length {n} is not a power of two"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "FFT buffer length");
        self.fwd.process(buf);
    }

    /// Inverse transform including the `1/n` scaling.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "FFT buffer length");
        self.inv.process(buf);
        let s = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Zero-padded forward transform of a real sequence.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward(&mut buf);
        buf
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<usize> {
    dim_check(a.len() == b.len() && !a.is_empty(), || {
        format!("sequence lengths {} and {}", a.len(), b.len())
    })?;
    Ok(a.len())
}

/// `y[k] = sum_{i<=k} kernel[i] * u[k-i]`, truncated to the input length.
pub fn causal_convolve(kernel: &[f64], u: &[f64]) -> Result<RealVector> {
    let l = check_lengths(kernel, u)?;
    let plan = FftPlan::new(next_pow2(2 * l - 1))?;
    let fk = plan.forward_real(kernel);
    let mut fu = plan.forward_real(u);
    for (a, b) in fu.iter_mut().zip(&fk) {
        *a *= b;
    }
    plan.inverse(&mut fu);
    Ok(fu[..l].iter().map(|c| c.re).collect::<Vec<_>>().into())
}

/// `r[i] = sum_t a[t + i] * b[t]` for `0 <= i < L`: the adjoint of causal
/// convolution with respect to either operand.
pub fn causal_correlate(a: &[f64], b: &[f64]) -> Result<RealVector> {
    let l = check_lengths(a, b)?;
    let plan = FftPlan::new(next_pow2(2 * l - 1))?;
    let fb = plan.forward_real(b);
    let mut fa = plan.forward_real(a);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    plan.inverse(&mut fa);
    Ok(fa[..l].iter().map(|c| c.re).collect::<Vec<_>>().into())
}
