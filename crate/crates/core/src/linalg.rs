//! Small dense complex linear-algebra kernels shared by the loop modules.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub type C = Complex64;
pub type CMat = DMatrix<Complex64>;

pub const ZERO: C = C { re: 0.0, im: 0.0 };
pub const ONE: C = C { re: 1.0, im: 0.0 };
pub const I: C = C { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// `[[0,1],[1,0]]`
pub fn a_matrix() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

/// `diag(1,-1)`
pub fn tau() -> CMat {
    CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn pauli(k: usize) -> CMat {
    match k {
        1 => a_matrix(),
        2 => CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        3 => tau(),
        _ => panic!("Pauli index must be 1, 2 or 3"),
    }
}

/// Row-major 2x2 matrix on the stack, used in per-sample hot loops.
pub type M2 = [C; 4];

pub const M2_IDENTITY: M2 = [ONE, ZERO, ZERO, ONE];

#[inline]
pub fn m2_mul(a: &M2, b: &M2) -> M2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

#[inline]
pub fn m2_adjoint(a: &M2) -> M2 {
    [a[0].conj(), a[2].conj(), a[1].conj(), a[3].conj()]
}

#[inline]
pub fn m2_det(a: &M2) -> C {
    a[0] * a[3] - a[1] * a[2]
}

#[inline]
pub fn m2_inverse(a: &M2) -> M2 {
    let inv = m2_det(a).inv();
    [a[3] * inv, -a[1] * inv, -a[2] * inv, a[0] * inv]
}

#[inline]
pub fn m2_add(a: &M2, b: &M2) -> M2 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

#[inline]
pub fn m2_sub(a: &M2, b: &M2) -> M2 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

#[inline]
pub fn m2_scale(a: &M2, s: C) -> M2 {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

#[inline]
pub fn m2_commutator(a: &M2, b: &M2) -> M2 {
    m2_sub(&m2_mul(a, b), &m2_mul(b, a))
}

#[inline]
pub fn m2_norm(a: &M2) -> f64 {
    a.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn m2_to_matrix(a: &M2) -> CMat {
    CMat::from_row_slice(2, 2, a)
}

pub fn m2_from_matrix(m: &CMat) -> M2 {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

/// `max |a^dagger a - I|`
#[inline]
pub fn m2_unitarity_defect(a: &M2) -> f64 {
    let g = m2_mul(&m2_adjoint(a), a);
    m2_norm(&m2_sub(&g, &M2_IDENTITY))
}

/// Entrywise sup norm.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |m^† m - I|` entrywise.
pub fn unitarity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let g = m.adjoint() * m;
    max_abs_diff(&g, &CMat::identity(n, n))
}

pub fn det(m: &CMat) -> C {
    if m.nrows() == 2 {
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    } else {
        m.clone().lu().determinant()
    }
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    if m.nrows() == 2 {
        let d = det(m);
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        let inv_d = d.inv();
        Some(CMat::from_row_slice(
            2,
            2,
            &[m[(1, 1)] * inv_d, -m[(0, 1)] * inv_d, -m[(1, 0)] * inv_d, m[(0, 0)] * inv_d],
        ))
    } else {
        m.clone().try_inverse()
    }
}

/// `cosh(s)` and `sinh(s)/s`, with the removable singularity at 0 expanded as a series.
#[inline]
pub fn cosh_sinhc(s2: C) -> (C, C) {
    if s2.norm() < 1e-8 {
        let ch = ONE + s2 / 2.0 + s2 * s2 / 24.0;
        let shc = ONE + s2 / 6.0 + s2 * s2 / 120.0;
        (ch, shc)
    } else {
        let s = s2.sqrt();
        (s.cosh(), s.sinh() / s)
    }
}

/// Exponential of a traceless 2x2 matrix `[[a,b],[c,-a]]` as `cosh(s) I + sinh(s)/s M`, `s^2 = -det M`.
#[inline]
pub fn exp2_traceless(a: C, b: C, cc: C) -> [C; 4] {
    let s2 = a * a + b * cc;
    let (ch, shc) = cosh_sinhc(s2);
    [ch + shc * a, shc * b, shc * cc, ch - shc * a]
}

/// `(cosh(s) - sinh(s)/s) / s^2` as a function of `s2 = s^2`.
#[inline]
fn cosh_minus_sinhc_over_s2(s2: C) -> C {
    if s2.norm() < 0.1 {
        ONE / 3.0 + s2 * (ONE / 30.0 + s2 * (ONE / 840.0 + s2 * (ONE / 45360.0 + s2 / 3991680.0)))
    } else {
        let s = s2.sqrt();
        (s.cosh() - s.sinh() / s) / s2
    }
}

/// [`exp2_traceless`] together with its derivative along a curve `M(t)`, given `M'(t)` as
/// `(da, db, dc)`.
#[inline]
pub fn exp2_traceless_derivative(a: C, b: C, cc: C, da: C, db: C, dc: C) -> ([C; 4], [C; 4]) {
    let s2 = a * a + b * cc;
    let ds2 = a * da * 2.0 + db * cc + b * dc;
    let (ch, shc) = cosh_sinhc(s2);
    let dch = shc * ds2 * 0.5;
    let dshc = cosh_minus_sinhc_over_s2(s2) * ds2 * 0.5;
    let value = [ch + shc * a, shc * b, shc * cc, ch - shc * a];
    let deriv = [
        dch + dshc * a + shc * da,
        dshc * b + shc * db,
        dshc * cc + shc * dc,
        dch - dshc * a - shc * da,
    ];
    (value, deriv)
}

/// Matrix exponential. Traceless 2x2 input uses the closed form; the general path is
/// scaling and squaring around a truncated Taylor series.
pub fn expm(m: &CMat) -> CMat {
    let n = m.nrows();
    if n == 2 {
        let tr = (m[(0, 0)] + m[(1, 1)]) / 2.0;
        let a = m[(0, 0)] - tr;
        let e = exp2_traceless(a, m[(0, 1)], m[(1, 0)]);
        let scale = tr.exp();
        return CMat::from_row_slice(2, 2, &e).map(|z| z * scale);
    }
    expm_general(m)
}

pub fn expm_general(m: &CMat) -> CMat {
    let n = m.nrows();
    let norm = m.iter().map(|z| z.norm()).sum::<f64>().max(0.0);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = m / C::from(2f64.powi(squarings as i32));
    let mut result = CMat::identity(n, n);
    let mut term = CMat::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / C::from(k as f64);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// In-place lower Cholesky of a Hermitian positive-definite matrix stored column-major
/// (only the lower triangle is read). On breakdown returns the offending pivot and its value.
pub fn cholesky_lower(a: &mut [C], n: usize) -> Result<(), (usize, f64)> {
    debug_assert_eq!(a.len(), n * n);
    let mut col = vec![ZERO; n];
    for j in 0..n {
        col[j..n].copy_from_slice(&a[j * n + j..j * n + n]);
        for k in 0..j {
            let ljk = a[k * n + j].conj();
            if ljk == ZERO {
                continue;
            }
            let src = &a[k * n + j..k * n + n];
            for (dst, s) in col[j..n].iter_mut().zip(src) {
                *dst -= s * ljk;
            }
        }
        let d = col[j].re;
        if !(d > 0.0) || !d.is_finite() {
            return Err((j, d));
        }
        let root = d.sqrt();
        let inv = 1.0 / root;
        a[j * n + j] = C::new(root, 0.0);
        for i in j + 1..n {
            a[j * n + i] = col[i] * inv;
        }
    }
    // zero the strict upper triangle so the buffer holds L exactly
    for j in 1..n {
        for i in 0..j {
            a[j * n + i] = ZERO;
        }
    }
    Ok(())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized forward DFT: `X_d = sum_k x_k e^{-2 pi i d k / n}`.
pub fn fft_forward(buf: &mut [C]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// Unnormalized inverse DFT: `x_k = sum_d X_d e^{2 pi i d k / n}`.
pub fn fft_inverse(buf: &mut [C]) {
    if buf.len() > 1 {
        plan(buf.len(), true).process(buf);
    }
}

/// Signed frequency of DFT bin `j` for length `n`, in `(-n/2, n/2]`.
pub fn signed_degree(j: usize, n: usize) -> i64 {
    let j = j as i64;
    let n = n as i64;
    if j > n / 2 {
        j - n
    } else {
        j
    }
}

/// Roots of a complex polynomial given by coefficients in ascending degree, via the
/// eigenvalues of the companion matrix, then polished by Newton steps.
pub fn polynomial_roots(coeffs: &[C]) -> Vec<C> {
    let mut coeffs = coeffs.to_vec();
    while coeffs.len() > 1 && coeffs.last().map_or(false, |z| z.norm() == 0.0) {
        coeffs.pop();
    }
    let deg = coeffs.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut comp = CMat::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = ONE;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let schur = nalgebra::linalg::Schur::new(comp);
    let (_, t) = schur.unpack();
    let mut roots: Vec<C> = (0..deg).map(|i| t[(i, i)]).collect();
    for r in roots.iter_mut() {
        for _ in 0..4 {
            let (p, dp) = poly_eval_with_derivative(&coeffs, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if !step.is_finite() {
                break;
            }
            *r -= step;
            if step.norm() < 1e-16 * r.norm().max(1.0) {
                break;
            }
        }
    }
    roots
}

pub fn poly_eval(coeffs: &[C], z: C) -> C {
    coeffs.iter().rev().fold(ZERO, |acc, &a| acc * z + a)
}

pub fn poly_eval_with_derivative(coeffs: &[C], z: C) -> (C, C) {
    let mut p = ZERO;
    let mut dp = ZERO;
    for &a in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + a;
    }
    (p, dp)
}

pub fn poly_mul(a: &[C], b: &[C]) -> Vec<C> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![ZERO; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn poly_derivative(a: &[C]) -> Vec<C> {
    a.iter().enumerate().skip(1).map(|(k, z)| z * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_exp(m: &CMat, terms: usize) -> CMat {
        let n = m.nrows();
        let mut out = CMat::identity(n, n);
        let mut term = CMat::identity(n, n);
        for k in 1..terms {
            term = &term * m / C::from(k as f64);
            out += &term;
        }
        out
    }

    #[test]
    fn closed_form_exponential_matches_taylor() {
        let m = a_matrix() * C::from(0.7);
        let e = expm(&m);
        let t = taylor_exp(&m, 20);
        assert!(max_abs_diff(&e, &t) < 1e-12);
        assert!((e[(0, 0)] - C::from(0.7f64.cosh())).norm() < 1e-14);
        assert!((e[(0, 1)] - C::from(0.7f64.sinh())).norm() < 1e-14);
    }

    #[test]
    fn exponential_derivative_matches_difference_quotient() {
        let m = |t: f64| (c(0.3 + t, -0.2 * t), c(0.5, 0.4 * t * t), c(-0.1 * t, 0.7));
        let dm = |t: f64| (c(1.0, -0.2), c(0.0, 0.8 * t), c(-0.1, 0.0));
        for &t in &[0.3, 1e-3, -0.8] {
            let (a, b, cc) = m(t);
            let (da, db, dc) = dm(t);
            let (_, d) = exp2_traceless_derivative(a, b, cc, da, db, dc);
            let h = 1e-5;
            let (a1, b1, c1) = m(t + h);
            let (a0, b0, c0) = m(t - h);
            let e1 = exp2_traceless(a1, b1, c1);
            let e0 = exp2_traceless(a0, b0, c0);
            for i in 0..4 {
                assert!(((e1[i] - e0[i]) / (2.0 * h) - d[i]).norm() < 1e-8);
            }
        }
        // near the removable singularity
        let (_, d) = exp2_traceless_derivative(ZERO, c(1e-4, 0.0), c(1e-4, 0.0), ZERO, ONE, ZERO);
        assert!((d[1] - ONE).norm() < 1e-7);
    }

    #[test]
    fn general_exponential_matches_taylor_on_3x3() {
        let m = CMat::from_fn(3, 3, |i, j| c(0.3 * i as f64 - 0.2 * j as f64, 0.1 * (i + j) as f64));
        let e = expm_general(&m);
        let t = taylor_exp(&m, 40);
        assert!(max_abs_diff(&e, &t) < 1e-12);
    }

    #[test]
    fn cholesky_reports_pivot_on_indefinite_input() {
        // [[1, 2], [2, 1]] is indefinite: second pivot is 1 - 4 < 0
        let mut a = vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)];
        let err = cholesky_lower(&mut a, 2).unwrap_err();
        assert_eq!(err.0, 1);
    }

    #[test]
    fn cholesky_reconstructs_hermitian_matrix() {
        let b = CMat::from_fn(4, 4, |i, j| c((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2));
        let h = &b * b.adjoint() + CMat::identity(4, 4);
        let mut buf: Vec<C> = h.iter().copied().collect();
        cholesky_lower(&mut buf, 4).unwrap();
        let l = CMat::from_column_slice(4, 4, &buf);
        assert!(max_abs_diff(&(&l * l.adjoint()), &h) < 1e-12);
    }

    #[test]
    fn companion_roots_of_cubic() {
        // (z - 1)(z + 2)(z - i)
        let p = poly_mul(&poly_mul(&[c(-1.0, 0.0), ONE], &[c(2.0, 0.0), ONE]), &[-I, ONE]);
        let mut roots = polynomial_roots(&p);
        roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((roots[0] - c(-2.0, 0.0)).norm() < 1e-12);
        assert!((roots[1] - I).norm() < 1e-12);
        assert!((roots[2] - ONE).norm() < 1e-12);
    }
}
