use crate::error::{dim_check, LsslError, Result};
use crate::linalg::{tridiag_solve, DenseMatrix, DiagonalMatrix, TridiagonalMatrix};

/// `P (D + T^-1) Q` with diagonal `P, D, Q` and tridiagonal `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredStateMatrix {
    pub p: DiagonalMatrix,
    pub d: DiagonalMatrix,
    pub q: DiagonalMatrix,
    pub t: TridiagonalMatrix,
}

impl StructuredStateMatrix {
    pub fn new(
        p: DiagonalMatrix,
        d: DiagonalMatrix,
        q: DiagonalMatrix,
        t: TridiagonalMatrix,
    ) -> Result<Self> {
        let n = t.len();
        dim_check(p.len() == n && d.len() == n && q.len() == n, || {
            format!("P={} D={} Q={} T={}", p.len(), d.len(), q.len(), n)
        })?;
        if p.diag().iter().chain(q.diag()).any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(LsslError::InvalidParameter("P and Q must have nonzero diagonals".into()));
        }
        Ok(Self { p, d, q, t })
    }

    pub fn order(&self) -> usize {
        self.t.len()
    }

    /// The same matrix with its sign flipped (`P -> -P`).
    pub fn negated(&self) -> Self {
        Self {
            p: self.p.scale(-1.0),
            ..self.clone()
        }
    }

    /// `self * x` in O(N): one tridiagonal solve.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let qx = self.q.apply(x);
        let tinv = tridiag_solve(&self.t, &qx)?;
        let dqx = self.d.apply(&qx);
        let inner: Vec<f64> = dqx.iter().zip(tinv.iter()).map(|(a, b)| a + b).collect();
        Ok(self.p.apply(&inner))
    }

    /// Dense reconstruction.
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let n = self.order();
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        Err(LsslError::InvalidParameter("state order N must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Unit lower bidiagonal `T` (1 on the diagonal, -1 below); `T^-1` is the
/// lower-triangular all-ones matrix.
fn cumulative_sum_inverse(n: usize) -> TridiagonalMatrix {
    TridiagonalMatrix::new(vec![-1.0; n - 1], vec![1.0; n], vec![0.0; n - 1]).expect("lengths")
}

fn sqrt_odd_diag(n: usize) -> DiagonalMatrix {
    DiagonalMatrix::new((0..n).map(|i| ((2 * i + 1) as f64).sqrt()).collect()).expect("n >= 1")
}

/// LegS: `P = Q = diag(sqrt(2n+1))`, `D = -diag(n/(2n+1))`.
pub fn structured_legs(n: usize) -> Result<StructuredStateMatrix> {
    check_order(n)?;
    let d = DiagonalMatrix::new((0..n).map(|i| -(i as f64) / (2 * i + 1) as f64).collect())?;
    StructuredStateMatrix::new(sqrt_odd_diag(n), d, sqrt_odd_diag(n), cumulative_sum_inverse(n))
}

/// LegT: `P = Q = diag(sqrt(2n+1))`, `D = 0`, and `T` the inverse of the
/// sign pattern `1` on and below the diagonal, `(-1)^(n-k)` above:
/// `1/2` at both ends of the diagonal, `-1/2` below and `1/2` above.
pub fn structured_legt(n: usize) -> Result<StructuredStateMatrix> {
    check_order(n)?;
    let mut main = vec![0.0; n];
    main[0] += 0.5;
    main[n - 1] += 0.5;
    let t = TridiagonalMatrix::new(vec![-0.5; n - 1], main, vec![0.5; n - 1])?;
    StructuredStateMatrix::new(sqrt_odd_diag(n), DiagonalMatrix::new(vec![0.0; n])?, sqrt_odd_diag(n), t)
}

/// LagT (`alpha = 0`): `P = Q = I`, `D = ((beta - 1)/2) I`, same `T` as LegS.
pub fn structured_lagt(n: usize, beta: f64) -> Result<StructuredStateMatrix> {
    check_order(n)?;
    if !(beta > -1.0) || !beta.is_finite() {
        return Err(LsslError::InvalidParameter(format!("LagT beta = {beta} must exceed -1")));
    }
    StructuredStateMatrix::new(
        DiagonalMatrix::identity(n),
        DiagonalMatrix::new(vec![0.5 * (beta - 1.0); n])?,
        DiagonalMatrix::identity(n),
        cumulative_sum_inverse(n),
    )
}
