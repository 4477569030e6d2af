use super::fft::{next_pow2, FftPlan};
use crate::error::{LsslError, Result};

/// Dense polynomial / truncated power series, coefficients in ascending degree.
/// The empty coefficient list is the zero polynomial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn truncated(mut self, len: usize) -> Self {
        self.coeffs.truncate(len);
        self
    }
}

const DIRECT_THRESHOLD: usize = 48;

fn mul_direct(p: &[f64], q: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &a) in p.iter().enumerate().take(len) {
        if a == 0.0 {
            continue;
        }
        for (j, &b) in q.iter().enumerate().take(len - i) {
            out[i + j] += a * b;
        }
    }
    out
}

fn mul_fft(p: &[f64], q: &[f64], len: usize) -> Vec<f64> {
    let full = p.len() + q.len() - 1;
    let plan = FftPlan::new(next_pow2(full)).expect("power of two");
    let fq = plan.forward_real(q);
    let mut fp = plan.forward_real(p);
    for (a, b) in fp.iter_mut().zip(&fq) {
        *a *= b;
    }
    plan.inverse(&mut fp);
    fp.iter().take(len).map(|c| c.re).collect()
}

/// Product truncated to `len` coefficients (mod `x^len`).
pub fn poly_mul_trunc(p: &[f64], q: &[f64], len: usize) -> Vec<f64> {
    if p.is_empty() || q.is_empty() || len == 0 {
        return vec![0.0; len];
    }
    let p = &p[..p.len().min(len)];
    let q = &q[..q.len().min(len)];
    let full = p.len() + q.len() - 1;
    let mut out = if p.len().min(q.len()) <= DIRECT_THRESHOLD {
        mul_direct(p, q, len.min(full))
    } else {
        mul_fft(p, q, len.min(full))
    };
    out.resize(len, 0.0);
    out
}

/// Exact product (FFT above a small size threshold, direct below).
pub fn poly_mul(p: &Polynomial, q: &Polynomial) -> Polynomial {
    if p.is_empty() || q.is_empty() {
        return Polynomial::default();
    }
    let full = p.len() + q.len() - 1;
    Polynomial::new(poly_mul_trunc(&p.coeffs, &q.coeffs, full))
}

/// `q` with `p * q = 1 (mod x^len)` by Newton iteration, doubling the
/// number of correct coefficients each step.
pub fn poly_inv_mod(p: &Polynomial, len: usize) -> Result<Polynomial> {
    let c0 = p.coeffs.first().copied().unwrap_or(0.0);
    if c0 == 0.0 {
        return Err(LsslError::ZeroConstantTerm);
    }
    if len == 0 {
        return Ok(Polynomial::default());
    }
    let mut q = vec![1.0 / c0];
    let mut prec = 1;
    while prec < len {
        prec = (2 * prec).min(len);
        // q <- q (2 - p q) mod x^prec
        let pq = poly_mul_trunc(&p.coeffs, &q, prec);
        let mut corr: Vec<f64> = pq.iter().map(|v| -v).collect();
        corr[0] += 2.0;
        q = poly_mul_trunc(&q, &corr, prec);
    }
    Ok(Polynomial::new(q))
}
