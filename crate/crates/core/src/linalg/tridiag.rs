use super::{DenseMatrix, RealVector};
use crate::error::{dim_check, LsslError, Result};

const PIVOT_TOL: f64 = 1e-14;

/// Tridiagonal matrix stored as three diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalMatrix {
    sub: Vec<f64>,
    main: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(sub: Vec<f64>, main: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let n = main.len();
        dim_check(n >= 1, || "empty tridiagonal".into())?;
        dim_check(sub.len() == n - 1 && sup.len() == n - 1, || {
            format!(
                "diagonal lengths sub={} main={} super={}",
                sub.len(),
                n,
                sup.len()
            )
        })?;
        Ok(Self { sub, main, sup })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            sub: vec![0.0; n.saturating_sub(1)],
            main: vec![1.0; n],
            sup: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn main(&self) -> &[f64] {
        &self.main
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    /// `self * diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Self {
        let n = self.len();
        Self {
            sub: (0..n - 1).map(|i| self.sub[i] * d[i]).collect(),
            main: (0..n).map(|i| self.main[i] * d[i]).collect(),
            sup: (0..n - 1).map(|i| self.sup[i] * d[i + 1]).collect(),
        }
    }

    /// `self + s * I`.
    pub fn add_identity(&self, s: f64) -> Self {
        let mut t = self.clone();
        for m in &mut t.main {
            *m += s;
        }
        t
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.len();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.main[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.sub[i];
                m[(i, i + 1)] = self.sup[i];
            }
        }
        m
    }
}

pub fn tridiag_matvec(t: &TridiagonalMatrix, x: &[f64]) -> Result<RealVector> {
    let n = t.len();
    dim_check(x.len() == n, || format!("tridiagonal {n} times vector {}", x.len()))?;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = t.main[i] * x[i];
        if i > 0 {
            v += t.sub[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            v += t.sup[i] * x[i + 1];
        }
        y[i] = v;
    }
    Ok(y.into())
}

/// Thomas algorithm. No pivoting; a pivot below `1e-14` in magnitude is
/// reported as singular.
pub fn tridiag_solve(t: &TridiagonalMatrix, b: &[f64]) -> Result<RealVector> {
    let n = t.len();
    dim_check(b.len() == n, || format!("tridiagonal {n} with rhs {}", b.len()))?;
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = t.main[0];
    if pivot.abs() <= PIVOT_TOL || !pivot.is_finite() {
        return Err(LsslError::SingularPivot { row: 0, pivot });
    }
    if n > 1 {
        c[0] = t.sup[0] / pivot;
    }
    d[0] = b[0] / pivot;
    for i in 1..n {
        pivot = t.main[i] - t.sub[i - 1] * c[i - 1];
        if pivot.abs() <= PIVOT_TOL || !pivot.is_finite() {
            return Err(LsslError::SingularPivot { row: i, pivot });
        }
        if i + 1 < n {
            c[i] = t.sup[i] / pivot;
        }
        d[i] = (b[i] - t.sub[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d.into())
}
