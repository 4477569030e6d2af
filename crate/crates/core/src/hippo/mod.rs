//! HiPPO state matrices and input vectors.
//!
//! Matrices are returned in their positive-entry form; the continuous
//! dynamics used throughout the crate are `x' = -A x + b u`.

mod structured;

pub use structured::{structured_lagt, structured_legs, structured_legt, StructuredStateMatrix};

use crate::error::{LsslError, Result};
use crate::linalg::{DenseMatrix, RealVector};
use crate::special::{binom, ln_gamma};

/// Measure family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HippoFamily {
    LegS,
    LegT,
    /// Translated Laguerre with `alpha = 0`.
    LagT { beta: f64 },
    Jacobi { alpha: f64, beta: f64 },
}

impl HippoFamily {
    pub fn name(&self) -> &'static str {
        match self {
            HippoFamily::LegS => "legs",
            HippoFamily::LegT => "legt",
            HippoFamily::LagT { .. } => "lagt",
            HippoFamily::Jacobi { .. } => "jacobi",
        }
    }

    /// Dense `(A, b)` for this family at order `n`.
    pub fn build(&self, n: usize) -> Result<HippoSystem> {
        match *self {
            HippoFamily::LegS => legs_matrix(n),
            HippoFamily::LegT => legt_matrix(n),
            HippoFamily::LagT { beta } => lagt_matrix(n, beta),
            HippoFamily::Jacobi { alpha, beta } => jacobi_matrix(n, alpha, beta),
        }
    }

    /// Structured `P (D + T^-1) Q` form, where one exists.
    pub fn structured(&self, n: usize) -> Option<Result<StructuredStateMatrix>> {
        match *self {
            HippoFamily::LegS => Some(structured_legs(n)),
            HippoFamily::LegT => Some(structured_legt(n)),
            HippoFamily::LagT { beta } => Some(structured_lagt(n, beta)),
            HippoFamily::Jacobi { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HippoSystem {
    pub a: DenseMatrix,
    pub b: RealVector,
    pub family: HippoFamily,
}

impl HippoSystem {
    pub fn order(&self) -> usize {
        self.b.len()
    }
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        Err(LsslError::InvalidParameter("state order N must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn sqrt_odd(n: usize) -> f64 {
    ((2 * n + 1) as f64).sqrt()
}

/// Scaled Legendre: `A[n][k] = sqrt(2n+1) sqrt(2k+1)` below the diagonal,
/// `n + 1` on it; `b[n] = sqrt(2n+1)`.
pub fn legs_matrix(n: usize) -> Result<HippoSystem> {
    check_order(n)?;
    let a = DenseMatrix::from_fn(n, n, |i, k| match i.cmp(&k) {
        std::cmp::Ordering::Greater => sqrt_odd(i) * sqrt_odd(k),
        std::cmp::Ordering::Equal => (i + 1) as f64,
        std::cmp::Ordering::Less => 0.0,
    });
    let b = (0..n).map(sqrt_odd).collect::<Vec<_>>().into();
    Ok(HippoSystem { a, b, family: HippoFamily::LegS })
}

/// Translated Legendre: `A[n][k] = sqrt(2n+1) sqrt(2k+1)` for `k <= n`,
/// times `(-1)^(n-k)` above the diagonal; `b[n] = sqrt((2n+1)/2)`.
pub fn legt_matrix(n: usize) -> Result<HippoSystem> {
    check_order(n)?;
    let a = DenseMatrix::from_fn(n, n, |i, k| {
        let sign = if k <= i || (k - i) % 2 == 0 { 1.0 } else { -1.0 };
        sign * sqrt_odd(i) * sqrt_odd(k)
    });
    let b = (0..n)
        .map(|i| ((2 * i + 1) as f64 / 2.0).sqrt())
        .collect::<Vec<_>>()
        .into();
    Ok(HippoSystem { a, b, family: HippoFamily::LegT })
}

/// Translated Laguerre with `alpha = 0`: constant diagonal `(1+beta)/2`,
/// ones strictly below; `b` is all ones.
pub fn lagt_matrix(n: usize, beta: f64) -> Result<HippoSystem> {
    check_order(n)?;
    if !(beta > -1.0) || !beta.is_finite() {
        return Err(LsslError::InvalidParameter(format!("LagT beta = {beta} must exceed -1")));
    }
    let a = DenseMatrix::from_fn(n, n, |i, k| match i.cmp(&k) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5 * (1.0 + beta),
        std::cmp::Ordering::Less => 0.0,
    });
    Ok(HippoSystem {
        a,
        b: vec![1.0; n].into(),
        family: HippoFamily::LagT { beta },
    })
}

pub const JACOBI_MAX_ORDER: usize = 256;

/// Diagonal factors of the Jacobi translated-measure matrix
/// `A = (D11 Q1 D12 - D21 Q1 D22) + 2 D3 Q2 D4`, with `Q1` strictly lower
/// all-ones and `Q2` all-ones.
#[derive(Debug, Clone)]
pub struct JacobiFactors {
    pub lambda: Vec<f64>,
    pub d11: Vec<f64>,
    pub d12: Vec<f64>,
    pub d21: Vec<f64>,
    pub d22: Vec<f64>,
    pub d3: Vec<f64>,
    pub d4: Vec<f64>,
    /// `p_n(1)`, the input vector.
    pub at_one: Vec<f64>,
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn jacobi_factors(n: usize, alpha: f64, beta: f64) -> Result<JacobiFactors> {
    check_order(n)?;
    if !(alpha > -1.0 && beta > -1.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(LsslError::InvalidParameter(format!(
            "Jacobi parameters ({alpha}, {beta}) must both exceed -1"
        )));
    }
    if n > JACOBI_MAX_ORDER {
        return Err(LsslError::InvalidParameter(format!(
            "Jacobi order {n} exceeds {JACOBI_MAX_ORDER}"
        )));
    }
    let s = alpha + beta;
    // ln[(2k+s+1) Γ(k+s+1)], folded to ln Γ(s+2) at k = 0 so the argument stays positive
    let ln_weighted = |k: usize| {
        let kf = k as f64;
        if k == 0 {
            ln_gamma(s + 2.0)
        } else {
            (2.0 * kf + s + 1.0).ln() + ln_gamma(kf + s + 1.0)
        }
    };
    let lambda: Vec<f64> = (0..n)
        .map(|k| {
            let kf = k as f64;
            let ln_sq = (s + 1.0) * std::f64::consts::LN_2 + ln_gamma(kf + alpha + 1.0)
                + ln_gamma(kf + beta + 1.0)
                - ln_weighted(k)
                - ln_gamma(kf + 1.0);
            (0.5 * ln_sq).exp()
        })
        .collect();
    let mut f = JacobiFactors {
        d11: vec![0.0; n],
        d12: vec![0.0; n],
        d21: vec![0.0; n],
        d22: vec![0.0; n],
        d3: vec![0.0; n],
        d4: vec![0.0; n],
        at_one: vec![0.0; n],
        lambda,
    };
    for k in 0..n {
        let kf = k as f64;
        let lam = f.lambda[k];
        // row factors only multiply the strictly-lower part; row 0 never contributes
        if k > 0 {
            let lg = ln_gamma(kf + s + 1.0);
            f.d11[k] = (ln_gamma(kf + beta + 1.0) - lg).exp() / lam;
            f.d21[k] = sign(k) * (ln_gamma(kf + alpha + 1.0) - lg).exp() / lam;
        }
        f.d12[k] = (ln_weighted(k) - ln_gamma(kf + beta + 1.0)).exp() * lam;
        f.d22[k] = sign(k) * (ln_weighted(k) - ln_gamma(kf + alpha + 1.0)).exp() * lam;
        f.d3[k] = sign(k) * binom(kf + beta, k) / lam;
        f.d4[k] = f.d3[k];
        f.at_one[k] = binom(kf + alpha, k) / lam;
    }
    let finite = [&f.d11, &f.d12, &f.d21, &f.d22, &f.d3, &f.at_one]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(LsslError::NonFinite(format!(
            "Jacobi factors overflow at N={n}, alpha={alpha}, beta={beta}"
        )));
    }
    Ok(f)
}

/// HiPPO matrix for the Jacobi measure `(1-z)^alpha (1+z)^beta` on a
/// sliding window, assembled from its diagonal factors.
pub fn jacobi_matrix(n: usize, alpha: f64, beta: f64) -> Result<HippoSystem> {
    let f = jacobi_factors(n, alpha, beta)?;
    let a = DenseMatrix::from_fn(n, n, |i, k| {
        let lower = if k < i {
            f.d11[i] * f.d12[k] - f.d21[i] * f.d22[k]
        } else {
            0.0
        };
        lower + 2.0 * f.d3[i] * f.d4[k]
    });
    Ok(HippoSystem {
        a,
        b: f.at_one.clone().into(),
        family: HippoFamily::Jacobi { alpha, beta },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::offdiag_rank;
    use crate::special::jacobi;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn legs_examples() {
        let s = legs_matrix(1).unwrap();
        assert_eq!(s.a.as_slice(), &[1.0]);
        assert_eq!(&*s.b, &[1.0]);

        let s = legs_matrix(2).unwrap();
        let r3 = 3f64.sqrt();
        assert!(close(s.a[(0, 0)], 1.0, 1e-12) && close(s.a[(0, 1)], 0.0, 0.0));
        assert!(close(s.a[(1, 0)], r3, 1e-12) && close(s.a[(1, 1)], 2.0, 1e-12));
        assert!(close(s.b[1], r3, 1e-12));

        let s = legs_matrix(3).unwrap();
        assert!(close(s.a[(2, 0)], 5f64.sqrt(), 1e-12));
        assert!(close(s.a[(2, 0)], 2.23607, 1e-5));
    }

    #[test]
    fn legt_examples() {
        let r3 = 3f64.sqrt();
        let s = legt_matrix(2).unwrap();
        let want = [1.0, -r3, r3, 3.0];
        for (a, b) in s.a.as_slice().iter().zip(&want) {
            assert!(close(*a, *b, 1e-12));
        }
        let s = legt_matrix(1).unwrap();
        assert_eq!(s.a.as_slice(), &[1.0]);
        assert!(close(s.b[0], 1.0 / 2f64.sqrt(), 1e-15));
        let s = legt_matrix(3).unwrap();
        assert!(close(s.a[(0, 2)], 5f64.sqrt(), 1e-12));
    }

    #[test]
    fn lagt_examples() {
        let s = lagt_matrix(3, 1.0).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(s.a.as_slice(), &want);
        let s = lagt_matrix(2, 0.0).unwrap();
        assert_eq!((s.a[(0, 0)], s.a[(1, 1)]), (0.5, 0.5));
        assert!(lagt_matrix(7, 0.3).unwrap().b.iter().all(|&v| v == 1.0));
        assert!(lagt_matrix(3, -1.0).is_err());
    }

    #[test]
    fn zero_order_rejected() {
        assert!(legs_matrix(0).is_err());
        assert!(legt_matrix(0).is_err());
        assert!(lagt_matrix(0, 0.0).is_err());
        assert!(jacobi_matrix(0, 0.0, 0.0).is_err());
    }

    #[test]
    fn jacobi_parameter_errors() {
        assert!(jacobi_matrix(4, -1.0, 0.0).is_err());
        assert!(jacobi_matrix(4, 0.0, -1.5).is_err());
        assert!(jacobi_matrix(257, 0.0, 0.0).is_err());
    }

    #[test]
    fn jacobi_zero_zero_is_legt() {
        for n in 1..=32 {
            let j = jacobi_matrix(n, 0.0, 0.0).unwrap();
            let l = legt_matrix(n).unwrap();
            assert!(j.a.max_abs_diff(&l.a) < 1e-9, "N={n}");
            for (x, y) in j.b.iter().zip(l.b.iter()) {
                assert!(close(*x, *y, 1e-12));
            }
        }
    }

    #[test]
    fn jacobi_lower_part_is_twice_the_derivative_expansion() {
        // p_n'(z) = sum_k (A1[n,k] / 2) p_k(z), where p_n = P_n^(a,b) / lambda_n.
        // Oracle: d/dz P_n^(a,b) = (n+a+b+1)/2 * P_{n-1}^(a+1,b+1).
        for &(a, b) in &[(0.5, 1.5), (1.5, 0.0), (0.0, 0.5), (-0.5, 0.25)] {
            let n = 12;
            let f = jacobi_factors(n, a, b).unwrap();
            for &z in &[-0.8, -0.1, 0.35, 0.9] {
                let p = jacobi(n, a, b, z);
                let shifted = jacobi(n, a + 1.0, b + 1.0, z);
                for i in 1..n {
                    let deriv = 0.5 * (i as f64 + a + b + 1.0) * shifted[i - 1] / f.lambda[i];
                    let expanded: f64 = (0..i)
                        .map(|k| 0.5 * (f.d11[i] * f.d12[k] - f.d21[i] * f.d22[k]) * p[k] / f.lambda[k])
                        .sum();
                    assert!(
                        (deriv - expanded).abs() <= 1e-9 * deriv.abs().max(1.0),
                        "a={a} b={b} n={i} z={z}: {deriv} vs {expanded}"
                    );
                }
            }
        }
    }

    #[test]
    fn quasiseparability() {
        assert!(offdiag_rank(&legs_matrix(32).unwrap().a, 1));
        assert!(offdiag_rank(&lagt_matrix(32, 0.5).unwrap().a, 1));
        assert!(offdiag_rank(&legt_matrix(32).unwrap().a, 1));
        for &a in &[0.0, 0.5, 1.5] {
            for &b in &[0.0, 0.5, 1.5] {
                assert!(offdiag_rank(&jacobi_matrix(32, a, b).unwrap().a, 3), "({a},{b})");
            }
        }
    }

    #[test]
    fn bit_stable() {
        assert_eq!(legs_matrix(17).unwrap(), legs_matrix(17).unwrap());
        assert_eq!(legt_matrix(17).unwrap().b, legt_matrix(17).unwrap().b);
    }
}
