//! Singular values and low-rank factors by one-sided Jacobi rotations.

use super::DenseMatrix;

const SWEEPS: usize = 60;

/// Orthogonalize the columns of `a` (`m x n`, any shape) in place and
/// return the accumulated right rotations `V` (`n x n`), so that the
/// updated `a` equals `a_in V` with mutually orthogonal columns.
fn jacobi_columns(a: &mut DenseMatrix) -> DenseMatrix {
    let (m, n) = (a.rows(), a.cols());
    let mut v = DenseMatrix::identity(n);
    for _ in 0..SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    v
}

fn column_norms(a: &DenseMatrix) -> Vec<f64> {
    (0..a.cols()).map(|j| a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Singular values in descending order.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Vec::new();
    }
    let mut work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    jacobi_columns(&mut work);
    let mut s = column_norms(&work);
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Factor `m ≈ U Vᵀ` keeping singular values above `abs_tol`.
/// Returns `(U, V)` with `r` columns each; `r` may be zero.
pub fn low_rank_factor(m: &DenseMatrix, abs_tol: f64) -> (DenseMatrix, DenseMatrix) {
    if m.rows() == 0 || m.cols() == 0 {
        return (DenseMatrix::zeros(m.rows(), 0), DenseMatrix::zeros(m.cols(), 0));
    }
    let tall = m.rows() >= m.cols();
    // work = X V with X = m (tall) or mᵀ (wide); then X ≈ work_k V_kᵀ
    let mut work = if tall { m.clone() } else { m.transpose() };
    let v = jacobi_columns(&mut work);
    let norms = column_norms(&work);
    let mut keep: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > abs_tol).collect();
    keep.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let r = keep.len();
    let w = DenseMatrix::from_fn(work.rows(), r, |i, j| work[(i, keep[j])]);
    let vk = DenseMatrix::from_fn(v.rows(), r, |i, j| v[(i, keep[j])]);
    if tall { (w, vk) } else { (vk, w) }
}

/// True iff every strictly-lower and strictly-upper corner block of `a`
/// has numerical rank at most `k_max` (singular values past index `k_max`
/// below `1e-8 * sigma_1`). Any strictly off-diagonal submatrix lies inside
/// one of these corner blocks.
pub fn offdiag_rank(a: &DenseMatrix, k_max: usize) -> bool {
    assert!(a.is_square(), "offdiag_rank needs a square matrix");
    let n = a.rows();
    let ok = |block: DenseMatrix| {
        let s = singular_values(&block);
        match s.first() {
            None => true,
            Some(&s1) if s1 == 0.0 => true,
            Some(&s1) => s.iter().skip(k_max).all(|&v| v < 1e-8 * s1),
        }
    };
    (0..n.saturating_sub(1)).all(|i| ok(a.block(i + 1, n, 0, i + 1)) && ok(a.block(0, i + 1, i + 1, n)))
}
