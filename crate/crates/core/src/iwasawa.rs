//! Numerical Iwasawa factorization of matrix loops.
//!
//! Two flavours are provided:
//!
//! * [`iwasawa_unit_circle`] splits a loop sampled on `|zeta| = 1` into a unitary factor and a
//!   factor holomorphic inside the unit disk, normalized to be upper triangular with positive
//!   diagonal at `zeta = 0`. The plus factor is obtained from the matrix spectral factorization
//!   `G = B^dagger B` of the Gram loop `G = input^dagger input`: the lower Cholesky factor of the
//!   truncated block-Toeplitz matrix `T_{ab} = G_{b-a}` carries the coefficients of `B` (adjointed,
//!   in reverse order) in its last block row.
//! * [`birkhoff_two_circle`] handles loops given on the two circles `|zeta| = eps` and
//!   `|zeta| = 1/eps`, splitting them into a factor holomorphic on the annulus between the circles
//!   and a factor holomorphic on the two complementary disks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C, ONE, ZERO};
use crate::loops::{circle_point, CircleLoopSamples, LaurentMatrixLoop};

pub const DEFAULT_WINDOW: usize = 64;

/// Samples stored sample-major: sample `k` occupies `data[k*d2..(k+1)*d2]`, row-major.
#[derive(Clone, Debug)]
pub(crate) struct FlatSamples {
    pub dim: usize,
    pub n: usize,
    pub data: Vec<C>,
}

impl FlatSamples {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self { dim, n, data: vec![ZERO; dim * dim * n] }
    }

    pub fn from_samples(values: &[CMat]) -> Self {
        let dim = values[0].nrows();
        let mut data = Vec::with_capacity(dim * dim * values.len());
        for m in values {
            for i in 0..dim {
                for j in 0..dim {
                    data.push(m[(i, j)]);
                }
            }
        }
        Self { dim, n: values.len(), data }
    }

    #[inline]
    pub fn sample(&self, k: usize) -> &[C] {
        let d2 = self.dim * self.dim;
        &self.data[k * d2..(k + 1) * d2]
    }

    #[inline]
    pub fn sample_mut(&mut self, k: usize) -> &mut [C] {
        let d2 = self.dim * self.dim;
        &mut self.data[k * d2..(k + 1) * d2]
    }

    pub fn to_matrix(&self, k: usize) -> CMat {
        CMat::from_row_slice(self.dim, self.dim, self.sample(k))
    }

    pub fn to_samples(&self) -> Vec<CMat> {
        (0..self.n).map(|k| self.to_matrix(k)).collect()
    }

    /// DFT of every entry, normalized by `1/n`: `bins[j]` is the coefficient of `e^{i j theta}`.
    pub fn dft(&self) -> Vec<C> {
        let d2 = self.dim * self.dim;
        let mut out = vec![ZERO; d2 * self.n];
        let mut buf = vec![ZERO; self.n];
        let inv_n = 1.0 / self.n as f64;
        for e in 0..d2 {
            for k in 0..self.n {
                buf[k] = self.data[k * d2 + e];
            }
            linalg::fft_forward(&mut buf);
            for k in 0..self.n {
                out[k * d2 + e] = buf[k] * inv_n;
            }
        }
        out
    }

    /// Inverse of [`dft`](Self::dft): evaluate sample-major bins back on the circle.
    pub fn from_bins(dim: usize, n: usize, bins: &[C]) -> Self {
        let d2 = dim * dim;
        let mut out = Self::zeros(dim, n);
        let mut buf = vec![ZERO; n];
        for e in 0..d2 {
            for k in 0..n {
                buf[k] = bins[k * d2 + e];
            }
            linalg::fft_inverse(&mut buf);
            for k in 0..n {
                out.data[k * d2 + e] = buf[k];
            }
        }
        out
    }
}

#[inline]
pub(crate) fn mat_mul(a: &[C], b: &[C], out: &mut [C], dim: usize) {
    for i in 0..dim {
        for j in 0..dim {
            let mut s = ZERO;
            for r in 0..dim {
                s += a[i * dim + r] * b[r * dim + j];
            }
            out[i * dim + j] = s;
        }
    }
}

/// `a^dagger b`
#[inline]
pub(crate) fn adjoint_mul(a: &[C], b: &[C], out: &mut [C], dim: usize) {
    for i in 0..dim {
        for j in 0..dim {
            let mut s = ZERO;
            for r in 0..dim {
                s += a[r * dim + i].conj() * b[r * dim + j];
            }
            out[i * dim + j] = s;
        }
    }
}

#[inline]
pub(crate) fn mat_inverse(a: &[C], out: &mut [C], dim: usize) -> bool {
    if dim == 2 {
        let d = a[0] * a[3] - a[1] * a[2];
        if d.norm() == 0.0 || !d.is_finite() {
            return false;
        }
        let inv = d.inv();
        out[0] = a[3] * inv;
        out[1] = -a[1] * inv;
        out[2] = -a[2] * inv;
        out[3] = a[0] * inv;
        true
    } else {
        match CMat::from_row_slice(dim, dim, a).try_inverse() {
            Some(m) => {
                for i in 0..dim {
                    for j in 0..dim {
                        out[i * dim + j] = m[(i, j)];
                    }
                }
                true
            }
            None => false,
        }
    }
}

#[inline]
fn unitarity_defect_flat(f: &[C], dim: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let mut s = ZERO;
            for r in 0..dim {
                s += f[r * dim + i].conj() * f[r * dim + j];
            }
            if i == j {
                s -= ONE;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

fn min_eigenvalue_hermitian(g: &[C], dim: usize) -> f64 {
    if dim == 1 {
        return g[0].re;
    }
    if dim == 2 {
        let half_tr = 0.5 * (g[0].re + g[3].re);
        let det = g[0].re * g[3].re - g[1].norm_sqr();
        let disc = (half_tr * half_tr - det).max(0.0).sqrt();
        let hi = half_tr + disc;
        // det / hi is the accurate small root
        return if hi > 0.0 { det / hi } else { half_tr - disc };
    }
    let m = CMat::from_row_slice(dim, dim, g);
    let m = (&m + m.adjoint()) * C::from(0.5);
    m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Accuracy figures of a unit-circle factorization.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct IwasawaDiagnostics {
    /// `max_k |input - F B|`
    pub reconstruction: f64,
    /// `max_k |F^dagger F - I|`
    pub unitarity: f64,
    /// DFT mass of `F^dagger input` in negative degrees (zero for an exact plus factor).
    pub minus_mass: f64,
    /// DFT mass of the Gram loop beyond the truncation window.
    pub gram_truncation: f64,
}

pub(crate) struct KernelOutput {
    pub unitary: FlatSamples,
    pub plus: FlatSamples,
    /// `window + 1` row-major blocks, degree ascending.
    pub plus_coeffs: Vec<C>,
    pub diagnostics: IwasawaDiagnostics,
}

/// Unit-circle factorization on flat samples. `window` is the number of Fourier blocks kept.
pub(crate) fn unit_circle_kernel(phi: &FlatSamples, window: usize) -> Result<KernelOutput> {
    let dim = phi.dim;
    let d2 = dim * dim;
    let n = phi.n;
    if n < 2 * window + 1 {
        return Err(Error::Argument(format!("{n} samples cannot resolve a factorization window of {window}")));
    }

    // Gram loop and its positivity
    let mut gram = FlatSamples::zeros(dim, n);
    for k in 0..n {
        let (src, dst) = (phi.sample(k), &mut gram.data[k * d2..(k + 1) * d2]);
        adjoint_mul(src, src, dst, dim);
        let scale = dst.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let min_eig = min_eigenvalue_hermitian(dst, dim);
        if min_eig < 1e-12 * scale.min(1.0) || !min_eig.is_finite() {
            return Err(Error::SingularGram { sample: k, min_eigenvalue: min_eig });
        }
    }
    let bins = gram.dft();
    let mut gram_truncation = 0.0;
    for j in 0..n {
        if linalg::signed_degree(j, n).unsigned_abs() as usize > window {
            gram_truncation += bins[j * d2..(j + 1) * d2].iter().map(|z| z.norm()).fold(0.0, f64::max);
        }
    }
    // G_d for d = 0..=window, Hermitian-averaged with the mirrored bin
    let coeff = |d: usize, p: usize, q: usize| -> C {
        let plus = bins[d * d2 + p * dim + q];
        let minus = bins[((n - d) % n) * d2 + q * dim + p].conj();
        (plus + minus) * 0.5
    };

    // block-Toeplitz matrix T_{ab} = G_{b-a}, lower triangle, column-major
    let blocks = window + 1;
    let s = blocks * dim;
    let mut t = vec![ZERO; s * s];
    for b in 0..blocks {
        for q in 0..dim {
            let col = b * dim + q;
            for a in b..blocks {
                let d = a - b;
                for p in 0..dim {
                    let row = a * dim + p;
                    if row < col {
                        continue;
                    }
                    // G_{b-a} = G_{-(a-b)} = G_{a-b}^dagger
                    t[col * s + row] = coeff(d, q, p).conj();
                }
            }
        }
    }
    linalg::cholesky_lower(&mut t, s).map_err(|(pivot, value)| Error::CholeskyBreakdown { pivot, value })?;

    // B_j = (L block (window, window - j))^dagger
    let mut plus_coeffs = vec![ZERO; blocks * d2];
    for j in 0..blocks {
        let cb = window - j;
        for p in 0..dim {
            for q in 0..dim {
                let row = window * dim + q;
                let col = cb * dim + p;
                plus_coeffs[j * d2 + p * dim + q] = t[col * s + row].conj();
            }
        }
    }

    let mut plus_bins = vec![ZERO; n * d2];
    plus_bins[..blocks * d2].copy_from_slice(&plus_coeffs);
    let plus = FlatSamples::from_bins(dim, n, &plus_bins);

    let mut unitary = FlatSamples::zeros(dim, n);
    let mut inv = vec![ZERO; d2];
    let mut tmp = vec![ZERO; d2];
    let mut reconstruction = 0.0f64;
    let mut unitarity = 0.0f64;
    for k in 0..n {
        if !mat_inverse(plus.sample(k), &mut inv, dim) {
            return Err(Error::SingularGram { sample: k, min_eigenvalue: 0.0 });
        }
        let f = unitary.sample_mut(k);
        mat_mul(phi.sample(k), &inv, f, dim);
        mat_mul(f, plus.sample(k), &mut tmp, dim);
        for (x, y) in tmp.iter().zip(phi.sample(k)) {
            reconstruction = reconstruction.max((x - y).norm());
        }
        unitarity = unitarity.max(unitarity_defect_flat(f, dim));
    }

    // F^dagger input should be holomorphic inside the disk
    let mut check = FlatSamples::zeros(dim, n);
    for k in 0..n {
        adjoint_mul(unitary.sample(k), phi.sample(k), &mut tmp, dim);
        check.sample_mut(k).copy_from_slice(&tmp);
    }
    let check_bins = check.dft();
    let mut minus_mass = 0.0;
    for j in 0..n {
        if linalg::signed_degree(j, n) < 0 {
            minus_mass += check_bins[j * d2..(j + 1) * d2].iter().map(|z| z.norm()).fold(0.0, f64::max);
        }
    }

    Ok(KernelOutput {
        unitary,
        plus,
        plus_coeffs,
        diagnostics: IwasawaDiagnostics { reconstruction, unitarity, minus_mass, gram_truncation },
    })
}

/// Result of [`iwasawa_unit_circle`]: `input = unitary_part * plus_part` at every sample.
#[derive(Clone, Debug)]
pub struct IwasawaFactors {
    pub unitary_part: CircleLoopSamples,
    pub plus_part: CircleLoopSamples,
    /// Taylor coefficients of the plus factor, degrees `0..=window`.
    pub plus_coeffs: LaurentMatrixLoop,
    /// Reconstruction error plus unitarity defect.
    pub residual: f64,
    pub diagnostics: IwasawaDiagnostics,
}

/// Factor a loop sampled on the unit circle as `F * B` with `F` unitary and `B` extending
/// holomorphically into the disk, `B(0)` upper triangular with positive diagonal.
pub fn iwasawa_unit_circle(input: &CircleLoopSamples, window: usize) -> Result<IwasawaFactors> {
    if (input.radius() - 1.0).abs() > 1e-12 {
        return Err(Error::Argument("unit-circle factorization needs samples on |zeta| = 1".into()));
    }
    let dim = input.dim();
    let flat = FlatSamples::from_samples(input.values());
    let out = unit_circle_kernel(&flat, window)?;
    let d2 = dim * dim;
    let coeffs = out
        .plus_coeffs
        .chunks(d2)
        .map(|c| CMat::from_row_slice(dim, dim, c))
        .collect();
    Ok(IwasawaFactors {
        unitary_part: CircleLoopSamples::new(dim, 1.0, out.unitary.to_samples())?,
        plus_part: CircleLoopSamples::new(dim, 1.0, out.plus.to_samples())?,
        plus_coeffs: LaurentMatrixLoop::new(dim, 0, coeffs)?,
        residual: out.diagnostics.reconstruction + out.diagnostics.unitarity,
        diagnostics: out.diagnostics,
    })
}

/// Result of [`birkhoff_two_circle`].
#[derive(Clone, Debug)]
pub struct TwoCircleFactors {
    /// Annulus factor sampled on `|zeta| = eps` and `|zeta| = 1/eps`.
    pub annulus_samples: (CircleLoopSamples, CircleLoopSamples),
    /// Laurent coefficients of the annulus factor over `[-window, window]`.
    pub annulus_loop: LaurentMatrixLoop,
    /// Disk factor as a Taylor loop around 0 and a Taylor loop in `1/zeta` around infinity.
    pub inner_outer: (LaurentMatrixLoop, LaurentMatrixLoop),
    /// Largest `|input X - annulus|` over both circles with `X` the inverse disk factor, relative to
    /// `max(1, |annulus|)` per sample.
    pub residual: f64,
    pub smallest_singular_value: f64,
}

/// Two-circle factorization `input = F_E g_I` with `F_E` holomorphic on `eps < |zeta| < 1/eps`
/// and `g_I` holomorphic on the two disks `|zeta| < eps`, `|zeta| > 1/eps`.
///
/// The system is linear in `X = g_I^{-1}`: the Laurent coefficients of `input * X_inner` (seen on
/// the inner circle) and `input * X_outer` (outer circle) must agree on `[-window, window]`.
/// A particular solution is pinned by `X_outer(infinity) = I`; the final constant right factor
/// makes `F_E` unitary on `|zeta| = 1` and `g_I(0)` upper triangular with positive diagonal.
pub fn birkhoff_two_circle(
    inner_samples: &CircleLoopSamples,
    outer_samples: &CircleLoopSamples,
    window: usize,
) -> Result<TwoCircleFactors> {
    let eps = inner_samples.radius();
    let dim = inner_samples.dim();
    let n = inner_samples.n_samples();
    if outer_samples.dim() != dim || outer_samples.n_samples() != n {
        return Err(Error::Argument("inner and outer samples must share dimension and sample count".into()));
    }
    if !(eps < 1.0) || (outer_samples.radius() * eps - 1.0).abs() > 1e-10 {
        return Err(Error::Argument("expected circles of radius eps < 1 and 1/eps".into()));
    }
    if n < 3 * window + 1 {
        return Err(Error::Argument(format!("{n} samples cannot resolve a two-circle window of {window}")));
    }
    let d2 = dim * dim;
    let w = window as i64;
    let inner_bins = FlatSamples::from_samples(inner_samples.values()).dft();
    let outer_bins = FlatSamples::from_samples(outer_samples.values()).dft();
    let bin = |bins: &[C], d: i64, p: usize, q: usize| bins[(d.rem_euclid(n as i64) as usize) * d2 + p * dim + q];

    let blocks = window + 1;
    let unknowns = 2 * blocks * dim;
    let mut sys = CMat::zeros(unknowns, unknowns);
    let x_col = |m: usize, q: usize| m * dim + q;
    let y_col = |m: usize, q: usize| (blocks + m) * dim + q;
    for (row_block, d) in (-w..=w).enumerate() {
        let (w_in, w_out) = if d >= 0 { (1.0, eps.powi(2 * d as i32)) } else { (eps.powi(-2 * d as i32), 1.0) };
        for p in 0..dim {
            let row = row_block * dim + p;
            for m in 0..blocks {
                for q in 0..dim {
                    sys[(row, x_col(m, q))] = bin(&inner_bins, d - m as i64, p, q) * w_in;
                    sys[(row, y_col(m, q))] = -bin(&outer_bins, d + m as i64, p, q) * w_out;
                }
            }
        }
    }
    let norm_row = (2 * window + 1) * dim;
    for q in 0..dim {
        sys[(norm_row + q, y_col(0, q))] = ONE;
    }
    let mut rhs = CMat::zeros(unknowns, dim);
    for q in 0..dim {
        rhs[(norm_row + q, q)] = ONE;
    }

    let svd = sys.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-14 * smax) {
        return Err(Error::RankDeficient { smallest_singular_value: smin });
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::Argument(e.to_string()))?;

    // scaled Taylor coefficients of X on each circle, one dim x dim block per degree
    let x_hat: Vec<CMat> = (0..blocks).map(|m| sol.rows(m * dim, dim).into_owned()).collect();
    let y_hat: Vec<CMat> = (0..blocks).map(|m| sol.rows((blocks + m) * dim, dim).into_owned()).collect();

    let bin_mat = |bins: &[C], d: i64| CMat::from_row_slice(dim, dim, &bins[(d.rem_euclid(n as i64) as usize) * d2..][..d2]);
    // Laurent coefficients of the (unnormalized) annulus factor
    let mut annulus: Vec<CMat> = Vec::with_capacity(2 * blocks - 1);
    for d in -w..=w {
        let mut acc = CMat::zeros(dim, dim);
        if d <= 0 {
            for (m, x) in x_hat.iter().enumerate() {
                acc += bin_mat(&inner_bins, d - m as i64) * x;
            }
            acc *= C::from(eps.powi(-d as i32));
        } else {
            for (m, y) in y_hat.iter().enumerate() {
                acc += bin_mat(&outer_bins, d + m as i64) * y;
            }
            acc *= C::from(eps.powi(d as i32));
        }
        annulus.push(acc);
    }
    let raw_loop = LaurentMatrixLoop::new(dim, -w, annulus)?;

    // constant right factor: unitary on |zeta| = 1, upper triangular positive X(0)
    let probe = 64usize;
    let mut gram = CMat::zeros(dim, dim);
    for k in 0..probe {
        let f = raw_loop.eval(circle_point(1.0, k, probe))?;
        gram += f.adjoint() * f;
    }
    gram /= C::from(probe as f64);
    let w_mat = linalg::inverse(&gram).ok_or(Error::RankDeficient { smallest_singular_value: smin })?;
    let x0 = &x_hat[0];
    let v = x0 * &w_mat * x0.adjoint();
    let u = reverse_cholesky_upper(&v).ok_or(Error::CholeskyBreakdown { pivot: 0, value: 0.0 })?;
    let x0_inv = linalg::inverse(x0).ok_or(Error::RankDeficient { smallest_singular_value: smin })?;
    let right = x0_inv * u;

    let annulus_loop = LaurentMatrixLoop::new(dim, -w, raw_loop.coeffs().iter().map(|m| m * &right).collect())?;
    let x_inner: Vec<CMat> = x_hat.iter().map(|m| m * &right).collect();
    let x_outer: Vec<CMat> = y_hat.iter().map(|m| m * &right).collect();

    // disk factor g_I = X^{-1} on both circles
    let mut residual = 0.0f64;
    let mut g_inner = Vec::with_capacity(n);
    let mut g_outer = Vec::with_capacity(n);
    let mut f_inner = Vec::with_capacity(n);
    let mut f_outer = Vec::with_capacity(n);
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let e = C::from_polar(1.0, theta);
        let xi = x_inner.iter().rev().fold(CMat::zeros(dim, dim), |acc, m| acc * e + m);
        let ei = e.conj();
        let xo = x_outer.iter().rev().fold(CMat::zeros(dim, dim), |acc, m| acc * ei + m);
        let gi = linalg::inverse(&xi).ok_or(Error::RankDeficient { smallest_singular_value: smin })?;
        let go = linalg::inverse(&xo).ok_or(Error::RankDeficient { smallest_singular_value: smin })?;
        let fi = annulus_loop.eval(inner_samples.zeta(k))?;
        let fo = annulus_loop.eval(outer_samples.zeta(k))?;
        // matching defect input X - F_E, which avoids inverting X
        let (vi, vo) = (&inner_samples.values()[k], &outer_samples.values()[k]);
        residual = residual.max(linalg::max_abs_diff(&(vi * &xi), &fi) / linalg::max_abs(&fi).max(1.0));
        residual = residual.max(linalg::max_abs_diff(&(vo * &xo), &fo) / linalg::max_abs(&fo).max(1.0));
        g_inner.push(gi);
        g_outer.push(go);
        f_inner.push(fi);
        f_outer.push(fo);
    }
    let g_inner = CircleLoopSamples::new(dim, eps, g_inner)?;
    let g_outer = CircleLoopSamples::new(dim, 1.0 / eps, g_outer)?;
    let (inner_taylor, _) = g_inner.fourier_coefficients(0, w)?;
    let (outer_taylor, _) = g_outer.fourier_coefficients(-w, 0)?;

    Ok(TwoCircleFactors {
        annulus_samples: (CircleLoopSamples::new(dim, eps, f_inner)?, CircleLoopSamples::new(dim, 1.0 / eps, f_outer)?),
        annulus_loop,
        inner_outer: (inner_taylor, outer_taylor),
        residual,
        smallest_singular_value: smin,
    })
}

/// Upper triangular `U` with positive diagonal and `U U^dagger = v`.
fn reverse_cholesky_upper(v: &CMat) -> Option<CMat> {
    let n = v.nrows();
    let rev = |i: usize| n - 1 - i;
    let flipped = DMatrix::from_fn(n, n, |i, j| v[(rev(i), rev(j))]);
    let herm = (&flipped + flipped.adjoint()) * C::from(0.5);
    let mut buf: Vec<C> = herm.iter().copied().collect();
    linalg::cholesky_lower(&mut buf, n).ok()?;
    let l = CMat::from_column_slice(n, n, &buf);
    Some(DMatrix::from_fn(n, n, |i, j| l[(rev(i), rev(j))]))
}
