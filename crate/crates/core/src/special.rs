//! Log-gamma, binomials and orthogonal polynomial evaluation.

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma domain");
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `binom(z, n) = Γ(z+1) / (Γ(n+1) Γ(z-n+1))` for real `z > n - 1`.
pub fn binom(z: f64, n: usize) -> f64 {
    let n = n as f64;
    (ln_gamma(z + 1.0) - ln_gamma(n + 1.0) - ln_gamma(z - n + 1.0)).exp()
}

/// Orthonormal Legendre functions `sqrt((2n+1)/2) P_n(z)` for `n < count`,
/// by the three-term recurrence.
pub fn legendre_normalized(count: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let (mut p_prev, mut p) = (0.0, 1.0);
    for n in 0..count {
        out.push(((2 * n + 1) as f64 / 2.0).sqrt() * p);
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * z * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
    }
    out
}

/// Jacobi polynomials `P_n^{(a,b)}(z)` for `n < count` (unnormalized).
pub fn jacobi(count: usize, a: f64, b: f64, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(1.0);
    if count == 1 {
        return out;
    }
    out.push(0.5 * (a - b) + 0.5 * (a + b + 2.0) * z);
    for n in 2..count {
        let nf = n as f64;
        let s = 2.0 * nf + a + b;
        let c1 = 2.0 * nf * (nf + a + b) * (s - 2.0);
        let c2 = (s - 1.0) * (s * (s - 2.0) * z + a * a - b * b);
        let c3 = 2.0 * (nf + a - 1.0) * (nf + b - 1.0) * s;
        out.push((c2 * out[n - 1] - c3 * out[n - 2]) / c1);
    }
    out
}
