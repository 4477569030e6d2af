//! `Cᵀ (I - A x)^-1 B (mod x^L)` by recursive quadrant splitting and the
//! Woodbury identity over truncated power series.

use num_complex::Complex64;

use super::KrylovKernel;
use crate::error::{dim_check, LsslError, Result};
use crate::linalg::{low_rank_factor, next_pow2, poly_mul_trunc, DenseMatrix, FftPlan, Lu};

const RANK_TOL: f64 = 1e-10;
const MAX_ORDER: usize = 64;
const MAX_LEN: usize = 4096;
const DIRECT_LEN: usize = 32;

/// Matrix of truncated power series, each entry `len` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    rows: usize,
    cols: usize,
    len: usize,
    data: Vec<f64>,
}

impl SeriesMatrix {
    pub fn zeros(rows: usize, cols: usize, len: usize) -> Self {
        Self { rows, cols, len, data: vec![0.0; rows * cols * len] }
    }

    pub fn identity(n: usize, len: usize) -> Self {
        let mut out = Self::zeros(n, n, len);
        if len > 0 {
            for i in 0..n {
                out.entry_mut(i, i)[0] = 1.0;
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn series_len(&self) -> usize {
        self.len
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.cols + j) * self.len;
        &self.data[at..at + self.len]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let at = (i * self.cols + j) * self.len;
        &mut self.data[at..at + self.len]
    }

    /// Coefficient matrix of `x^k`.
    pub fn coefficient(&self, k: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j)[k])
    }

    fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        let mut out = Self::zeros(r1 - r0, c1 - c0, self.len);
        for i in r0..r1 {
            for j in c0..c1 {
                out.entry_mut(i - r0, j - c0).copy_from_slice(self.entry(i, j));
            }
        }
        out
    }

    fn paste(&mut self, r0: usize, c0: usize, src: &Self) {
        for i in 0..src.rows {
            for j in 0..src.cols {
                self.entry_mut(r0 + i, c0 + j).copy_from_slice(src.entry(i, j));
            }
        }
    }

    fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Multiply every entry by `x`, dropping the top coefficient.
    fn shift(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, self.len);
        if self.len > 0 {
            for (dst, src) in out.data.chunks_mut(self.len).zip(self.data.chunks(self.len)) {
                dst[1..].copy_from_slice(&src[..self.len - 1]);
            }
        }
        out
    }

    fn truncated(&self, len: usize) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, len);
        let keep = len.min(self.len);
        for (dst, src) in out.data.chunks_mut(len.max(1)).zip(self.data.chunks(self.len.max(1))) {
            dst[..keep].copy_from_slice(&src[..keep]);
        }
        out
    }

    /// Product of series matrices mod `x^len`.
    pub fn matmul(&self, other: &Self, len: usize) -> Result<Self> {
        dim_check(self.cols == other.rows, || {
            format!("series product {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols)
        })?;
        let mut out = Self::zeros(self.rows, other.cols, len);
        if len == 0 || self.cols == 0 {
            return Ok(out);
        }
        if len <= DIRECT_LEN {
            for i in 0..self.rows {
                for j in 0..other.cols {
                    let acc = out.entry_mut(i, j);
                    for k in 0..self.cols {
                        let prod = poly_mul_trunc(self.entry(i, k), other.entry(k, j), len);
                        for (a, b) in acc.iter_mut().zip(&prod) {
                            *a += b;
                        }
                    }
                }
            }
            return Ok(out);
        }
        // transform every operand once, accumulate in the frequency domain
        let plan = FftPlan::new(next_pow2(2 * len - 1))?;
        let fwd = |m: &Self| -> Vec<Vec<Complex64>> {
            m.data
                .chunks(m.len)
                .map(|c| plan.forward_real(&c[..c.len().min(len)]))
                .collect()
        };
        let fa = fwd(self);
        let fb = fwd(other);
        let size = plan.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); size];
        for i in 0..self.rows {
            for j in 0..other.cols {
                acc.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for k in 0..self.cols {
                    let a = &fa[i * self.cols + k];
                    let b = &fb[k * other.cols + j];
                    for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
                        *s += x * y;
                    }
                }
                plan.inverse(&mut acc);
                for (dst, v) in out.entry_mut(i, j).iter_mut().zip(&acc) {
                    *dst = v.re;
                }
            }
        }
        Ok(out)
    }

    /// Inverse mod `x^len` by Newton iteration `X <- X (2I - S X)`.
    pub fn inverse(&self, len: usize) -> Result<Self> {
        dim_check(self.rows == self.cols, || format!("inverse of {}x{} series", self.rows, self.cols))?;
        let n = self.rows;
        if len == 0 || n == 0 {
            return Ok(Self::zeros(n, n, len));
        }
        if self.len == 0 {
            return Err(LsslError::SeriesInversion(0.0));
        }
        let lu = Lu::new(&self.coefficient(0)).map_err(|e| match e {
            LsslError::SingularPivot { pivot, .. } => LsslError::SeriesInversion(pivot),
            other => other,
        })?;
        let c0inv = lu.solve_matrix(&DenseMatrix::identity(n));
        let mut x = Self::zeros(n, n, 1);
        for i in 0..n {
            for j in 0..n {
                x.entry_mut(i, j)[0] = c0inv[(i, j)];
            }
        }
        let mut prec = 1;
        while prec < len {
            prec = (2 * prec).min(len);
            let xp = x.truncated(prec);
            let mut corr = self.truncated(prec).matmul(&xp, prec)?;
            for v in corr.data.iter_mut() {
                *v = -*v;
            }
            corr.axpy(2.0, &Self::identity(n, prec));
            x = xp.matmul(&corr, prec)?;
        }
        Ok(x)
    }
}

fn hcat(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
        if j < a.cols() { a[(i, j)] } else { b[(i, j - a.cols())] }
    })
}

/// `leftᵀ (I - A x)^-1 right` as a `q x p` series matrix.
fn resolvent(a: &DenseMatrix, right: &DenseMatrix, left: &DenseMatrix, len: usize) -> Result<SeriesMatrix> {
    let n = a.rows();
    let (p, q) = (right.cols(), left.cols());
    if n == 1 {
        let mut geo = vec![1.0; len];
        for k in 1..len {
            geo[k] = geo[k - 1] * a[(0, 0)];
        }
        let mut out = SeriesMatrix::zeros(q, p, len);
        for i in 0..q {
            for j in 0..p {
                let s = left[(0, i)] * right[(0, j)];
                for (dst, g) in out.entry_mut(i, j).iter_mut().zip(&geo) {
                    *dst = s * g;
                }
            }
        }
        return Ok(out);
    }
    let h = n / 2;
    let (uu, vu) = low_rank_factor(&a.block(0, h, h, n), RANK_TOL);
    let (ul, vl) = low_rank_factor(&a.block(h, n, 0, h), RANK_TOL);
    let (ru, rl) = (uu.cols(), ul.cols());

    let r0 = resolvent(
        &a.block(0, h, 0, h),
        &hcat(&right.block(0, h, 0, p), &uu),
        &hcat(&left.block(0, h, 0, q), &vl),
        len,
    )?;
    let r1 = resolvent(
        &a.block(h, n, h, n),
        &hcat(&right.block(h, n, 0, p), &ul),
        &hcat(&left.block(h, n, 0, q), &vu),
        len,
    )?;

    let mut out = r0.block(0, q, 0, p);
    out.axpy(1.0, &r1.block(0, q, 0, p));
    let r = ru + rl;
    if r == 0 || len < 2 {
        return Ok(out);
    }
    // off-diagonal part of A is W Zᵀ, W = diag(U_U, U_L), Z = [[0, V_L], [V_U, 0]]
    let mut m2 = SeriesMatrix::zeros(q, r, len);
    m2.paste(0, 0, &r0.block(0, q, p, p + ru));
    m2.paste(0, ru, &r1.block(0, q, p, p + rl));
    let mut m3 = SeriesMatrix::zeros(r, r, len);
    m3.paste(0, ru, &r1.block(q, q + ru, p, p + rl));
    m3.paste(ru, 0, &r0.block(q, q + rl, p, p + ru));
    let mut m4 = SeriesMatrix::zeros(r, p, len);
    m4.paste(0, 0, &r1.block(q, q + ru, 0, p));
    m4.paste(ru, 0, &r0.block(q, q + rl, 0, p));

    let mut core = SeriesMatrix::identity(r, len);
    core.axpy(-1.0, &m3.shift());
    let inner = core.inverse(len - 1)?;
    let tail = m2.matmul(&inner, len - 1)?.matmul(&m4, len - 1)?;
    out.axpy(1.0, &tail.truncated(len).shift());
    Ok(out)
}

/// Taps `(cᵀ A^i b)_{i < L}` from the series of `cᵀ (I - A x)^-1 b`.
///
/// Proof-of-concept scale only: `N` a power of two up to 64, `L <= 4096`.
/// Floating-point series arithmetic is not stable when sub-blocks of `A`
/// have powers that grow; callers should pass a discretized (contractive)
/// state matrix.
pub fn resolvent_kernel_fast(a: &DenseMatrix, b: &[f64], c: &[f64], len: usize) -> Result<KrylovKernel> {
    let n = a.rows();
    dim_check(a.is_square() && b.len() == n && c.len() == n, || {
        format!("A is {}x{}, b {}, c {}", a.rows(), a.cols(), b.len(), c.len())
    })?;
    if !n.is_power_of_two() || n > MAX_ORDER {
        return Err(LsslError::InvalidParameter(format!("resolvent needs N a power of two <= {MAX_ORDER}, got {n}")));
    }
    if len == 0 || len > MAX_LEN {
        return Err(LsslError::InvalidParameter(format!("resolvent length {len} outside 1..={MAX_LEN}")));
    }
    let right = DenseMatrix::from_vec(n, 1, b.to_vec())?;
    let left = DenseMatrix::from_vec(n, 1, c.to_vec())?;
    let series = resolvent(a, &right, &left, len)?;
    let taps = series.entry(0, 0).to_vec();
    if taps.iter().any(|v| !v.is_finite()) {
        return Err(LsslError::NonFinite("resolvent series".into()));
    }
    Ok(KrylovKernel { taps: taps.into(), channel: 0 })
}
