//! GBT discretization, the forward/backward difference maps (dense and
//! structured) and their adjoints.

use crate::error::{dim_check, LsslError, Result};
use crate::hippo::StructuredStateMatrix;
use crate::linalg::{tridiag_solve, DenseMatrix, Lu, RealVector};

/// Discretized single-input SSM with `M` output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSSM {
    pub a_bar: DenseMatrix,
    pub b_bar: RealVector,
    pub c: DenseMatrix,
    pub d: RealVector,
    pub dt: f64,
}

impl DiscreteSSM {
    /// Bilinear discretization of `x' = A x + B u`, `y = C x + D u`.
    pub fn bilinear(a: &DenseMatrix, b: &[f64], c: DenseMatrix, d: RealVector, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(LsslError::InvalidParameter(format!("step size {dt} must be positive")));
        }
        dim_check(c.cols() == a.rows() && d.len() == c.rows(), || {
            format!("C is {}x{}, D has {} entries, N = {}", c.rows(), c.cols(), d.len(), a.rows())
        })?;
        let (a_bar, b_bar) = gbt_discretize(a, b, dt, 0.5)?;
        if !a_bar.is_finite() {
            return Err(LsslError::NonFinite("discretized state matrix".into()));
        }
        Ok(Self { a_bar, b_bar, c, d, dt })
    }

    pub fn order(&self) -> usize {
        self.b_bar.len()
    }

    pub fn channels(&self) -> usize {
        self.c.rows()
    }
}

/// `a_bar = (I - alpha dt A)^-1 (I + (1 - alpha) dt A)`,
/// `b_bar = dt (I - alpha dt A)^-1 B`.
pub fn gbt_discretize(a: &DenseMatrix, b: &[f64], dt: f64, alpha: f64) -> Result<(DenseMatrix, RealVector)> {
    dim_check(a.is_square() && a.rows() == b.len(), || {
        format!("A is {}x{}, B has {} entries", a.rows(), a.cols(), b.len())
    })?;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(LsslError::InvalidParameter(format!("step size {dt} must be non-negative")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LsslError::InvalidParameter(format!("GBT alpha {alpha} outside [0, 1]")));
    }
    let lu = Lu::new(&a.shifted_identity(-alpha * dt))?;
    let a_bar = lu.solve_matrix(&a.shifted_identity((1.0 - alpha) * dt));
    let b_bar: Vec<f64> = lu.solve(b).into_iter().map(|v| v * dt).collect();
    Ok((a_bar, b_bar.into()))
}

fn check_vec(a: &DenseMatrix, x: &[f64]) -> Result<()> {
    dim_check(a.is_square() && a.rows() == x.len(), || {
        format!("A is {}x{}, vector has {} entries", a.rows(), a.cols(), x.len())
    })
}

/// `F(A, dt, x) = (I + dt A) x`.
pub fn forward_diff(a: &DenseMatrix, dt: f64, x: &[f64]) -> Result<RealVector> {
    check_vec(a, x)?;
    let mut y = vec![0.0; x.len()];
    a.matvec_into(x, &mut y);
    Ok(y.iter().zip(x).map(|(ax, xi)| xi + dt * ax).collect::<Vec<_>>().into())
}

/// `B(A, dt, x) = (I + dt A)^-1 x`, by partial-pivoting elimination.
pub fn backward_diff(a: &DenseMatrix, dt: f64, x: &[f64]) -> Result<RealVector> {
    check_vec(a, x)?;
    Ok(Lu::new(&a.shifted_identity(dt))?.solve(x).into())
}

/// One bilinear step `x' = B(A, -dt/2, F(A, dt/2, x) + dt b u)`.
pub fn bilinear_step(a: &DenseMatrix, b: &[f64], dt: f64, x: &[f64], u: f64) -> Result<RealVector> {
    let mut w = forward_diff(a, 0.5 * dt, x)?;
    for (wi, bi) in w.iter_mut().zip(b) {
        *wi += dt * bi * u;
    }
    backward_diff(a, -0.5 * dt, &w)
}

/// Structured forward difference: `x + dt P D Q x + dt P T^-1 Q x`.
pub fn forward_diff_structured(s: &StructuredStateMatrix, dt: f64, x: &[f64]) -> Result<RealVector> {
    dim_check(s.order() == x.len(), || format!("N = {}, vector {}", s.order(), x.len()))?;
    let ax = s.apply(x)?;
    Ok(x.iter().zip(&ax).map(|(xi, v)| xi + dt * v).collect::<Vec<_>>().into())
}

/// Structured backward difference:
/// `G^-1 = Q^-1 (T P^-1 Q^-1 + dt T D + dt I)^-1 T P^-1`, one tridiagonal solve.
pub fn backward_diff_structured(s: &StructuredStateMatrix, dt: f64, x: &[f64]) -> Result<RealVector> {
    dim_check(s.order() == x.len(), || format!("N = {}, vector {}", s.order(), x.len()))?;
    let scale: Vec<f64> = s
        .p
        .diag()
        .iter()
        .zip(s.q.diag())
        .zip(s.d.diag())
        .map(|((p, q), d)| 1.0 / (p * q) + dt * d)
        .collect();
    let middle = s.t.scale_columns(&scale).add_identity(dt);
    let rhs = crate::linalg::tridiag_matvec(&s.t, &s.p.apply_inverse(x))?;
    let z = tridiag_solve(&middle, &rhs)?;
    Ok(s.q.apply_inverse(&z).into())
}

/// One bilinear step using the structured primitives.
pub fn bilinear_step_structured(
    s: &StructuredStateMatrix,
    b: &[f64],
    dt: f64,
    x: &[f64],
    u: f64,
) -> Result<RealVector> {
    let mut w = forward_diff_structured(s, 0.5 * dt, x)?;
    for (wi, bi) in w.iter_mut().zip(b) {
        *wi += dt * bi * u;
    }
    backward_diff_structured(s, -0.5 * dt, &w)
}

/// Gradients of a scalar loss through one difference map.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffGrad {
    pub dx: RealVector,
    pub d_dt: f64,
    pub d_a: DenseMatrix,
}

fn outer(scale: f64, u: &[f64], v: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(u.len(), v.len(), |i, j| scale * u[i] * v[j])
}

/// Adjoint of `y = B(A, dt, x)`: `dx = B(Aᵀ, dt, dy)`, `d_dt = -dxᵀ A y`,
/// `dA = -dt dx yᵀ`.
pub fn backward_diff_grad(a: &DenseMatrix, dt: f64, x: &[f64], dy: &[f64]) -> Result<DiffGrad> {
    check_vec(a, x)?;
    check_vec(a, dy)?;
    let lu = Lu::new(&a.shifted_identity(dt))?;
    let y = lu.solve(x);
    let dx = lu.solve_transpose(dy);
    let mut ay = vec![0.0; y.len()];
    a.matvec_into(&y, &mut ay);
    let d_dt = -dx.iter().zip(&ay).map(|(p, q)| p * q).sum::<f64>();
    let d_a = outer(-dt, &dx, &y);
    Ok(DiffGrad { dx: dx.into(), d_dt, d_a })
}

/// Adjoint of `y = F(A, dt, x)`: `dx = F(Aᵀ, dt, dy)`, `d_dt = dyᵀ A x`,
/// `dA = dt dy xᵀ`.
pub fn forward_diff_grad(a: &DenseMatrix, dt: f64, x: &[f64], dy: &[f64]) -> Result<DiffGrad> {
    check_vec(a, x)?;
    check_vec(a, dy)?;
    let atdy = a.matvec_transpose(dy);
    let dx: Vec<f64> = dy.iter().zip(&atdy).map(|(d, v)| d + dt * v).collect();
    let mut ax = vec![0.0; x.len()];
    a.matvec_into(x, &mut ax);
    let d_dt = dy.iter().zip(&ax).map(|(p, q)| p * q).sum();
    Ok(DiffGrad { dx: dx.into(), d_dt, d_a: outer(dt, dy, x) })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrence `x = (1 - sigma(z)) x_prev + sigma(z) u`.
pub fn gate_step(x_prev: f64, u: f64, z: f64) -> f64 {
    let s = sigmoid(z);
    (1.0 - s) * x_prev + s * u
}
