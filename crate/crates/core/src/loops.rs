//! Matrix-valued Laurent loops in the spectral parameter and their samples on circles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C, ONE, ZERO};

/// A finitely supported Laurent series `sum_d coeffs[d] zeta^d` of `dim x dim` complex matrices.
///
/// Coefficients are stored densely over `[d_min, d_max]`; degrees outside that window are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentMatrixLoop {
    dim: usize,
    d_min: i64,
    coeffs: Vec<CMat>,
}

impl LaurentMatrixLoop {
    pub fn new(dim: usize, d_min: i64, coeffs: Vec<CMat>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("loop dimension must be positive".into()));
        }
        if coeffs.is_empty() {
            return Err(Error::Argument("loop needs at least one coefficient".into()));
        }
        if let Some(bad) = coeffs.iter().position(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::Argument(format!("coefficient {bad} is not {dim}x{dim}")));
        }
        Ok(Self { dim, d_min, coeffs })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, d_min: 0, coeffs: vec![CMat::zeros(dim, dim)] }
    }

    pub fn constant(m: CMat) -> Self {
        Self::monomial(m, 0)
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(CMat::identity(dim, dim))
    }

    /// `m * zeta^degree`
    pub fn monomial(m: CMat, degree: i64) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "coefficient must be square");
        Self { dim: m.nrows(), d_min: degree, coeffs: vec![m] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn d_min(&self) -> i64 {
        self.d_min
    }

    pub fn d_max(&self) -> i64 {
        self.d_min + self.coeffs.len() as i64 - 1
    }

    pub fn coeffs(&self) -> &[CMat] {
        &self.coeffs
    }

    /// Coefficient at `degree`; the zero matrix outside the support.
    pub fn coeff(&self, degree: i64) -> CMat {
        if degree < self.d_min || degree > self.d_max() {
            CMat::zeros(self.dim, self.dim)
        } else {
            self.coeffs[(degree - self.d_min) as usize].clone()
        }
    }

    /// Evaluate at `zeta`, Horner in `zeta` for the nonnegative degrees and in `1/zeta` for the rest.
    pub fn eval(&self, zeta: C) -> Result<CMat> {
        let n = self.dim;
        if zeta == ZERO {
            if self.d_min < 0 && self.coeffs[..(-self.d_min) as usize].iter().any(|m| linalg::max_abs(m) > 0.0) {
                return Err(Error::Domain("loop with negative degrees evaluated at zeta = 0".into()));
            }
            return Ok(self.coeff(0));
        }
        let mut pos = CMat::zeros(n, n);
        for d in (self.d_min.max(0)..=self.d_max()).rev() {
            pos = pos * zeta + &self.coeffs[(d - self.d_min) as usize];
        }
        if self.d_max() < 0 {
            // every degree is negative; fold the whole tail below
            pos = CMat::zeros(n, n);
        } else if self.d_min > 0 {
            pos *= zeta.powi(self.d_min as i32);
        }
        let mut neg = CMat::zeros(n, n);
        if self.d_min < 0 {
            let inv = zeta.inv();
            let top = self.d_max().min(-1);
            for d in self.d_min..=top {
                neg = neg * inv + &self.coeffs[(d - self.d_min) as usize];
            }
            // neg now holds sum_d c_d inv^{d - d_min}... rescale to inv^{-d}
            neg *= inv.powi((-top) as i32);
        }
        Ok(pos + neg)
    }

    pub fn scale(&self, s: C) -> Self {
        Self { dim: self.dim, d_min: self.d_min, coeffs: self.coeffs.iter().map(|m| m * s).collect() }
    }

    /// Multiply by `zeta^k`.
    pub fn shift(&self, k: i64) -> Self {
        Self { dim: self.dim, d_min: self.d_min + k, coeffs: self.coeffs.clone() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let lo = self.d_min.min(other.d_min);
        let hi = self.d_max().max(other.d_max());
        let coeffs = (lo..=hi).map(|d| self.coeff(d) + other.coeff(d)).collect();
        Self { dim: self.dim, d_min: lo, coeffs }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    /// Product of loops (convolution of coefficients).
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let len = self.coeffs.len() + other.coeffs.len() - 1;
        let mut coeffs = vec![CMat::zeros(n, n); len];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self { dim: n, d_min: self.d_min + other.d_min, coeffs }
    }

    /// `zeta -> g(1/conj(zeta))^dagger`: the degree-`d` coefficient becomes the adjoint at degree `-d`.
    pub fn dagger_flip(&self) -> Self {
        let coeffs = self.coeffs.iter().rev().map(|m| m.adjoint()).collect();
        Self { dim: self.dim, d_min: -self.d_max(), coeffs }
    }

    /// Drop leading and trailing coefficients whose entries are all below `tol`.
    pub fn trimmed(&self, tol: f64) -> Self {
        let keep = |m: &CMat| linalg::max_abs(m) > tol;
        let first = self.coeffs.iter().position(keep);
        match first {
            None => Self::zero(self.dim),
            Some(first) => {
                let last = self.coeffs.iter().rposition(keep).unwrap();
                Self {
                    dim: self.dim,
                    d_min: self.d_min + first as i64,
                    coeffs: self.coeffs[first..=last].to_vec(),
                }
            }
        }
    }

    /// Largest coefficient entry over all degrees.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    /// Sample at `radius * exp(2 pi i k / n)`, `k = 0..n`.
    pub fn sample_on_circle(&self, radius: f64, n: usize) -> Result<CircleLoopSamples> {
        let width = self.coeffs.len();
        if n < 2 * width {
            return Err(Error::Argument(format!(
                "{n} samples cannot resolve a loop with {width} coefficients (need at least {})",
                2 * width
            )));
        }
        let values = (0..n)
            .map(|k| self.eval(circle_point(radius, k, n)))
            .collect::<Result<Vec<_>>>()?;
        CircleLoopSamples::new(self.dim, radius, values)
    }

    /// Re-express a 2x2 twisted loop (`g(-zeta) = tau g(zeta) tau`) in `lambda = zeta^2`
    /// by conjugating with `diag(1, zeta)`.
    pub fn untwist(&self) -> Result<Self> {
        if self.dim != 2 {
            return Err(Error::Argument("untwisting is defined for 2x2 loops".into()));
        }
        // entry (i, j) gets multiplied by zeta^{i - j}
        let lo = self.d_min - 1;
        let hi = self.d_max() + 1;
        let mut out: Vec<(i64, CMat)> = Vec::new();
        for d in lo..=hi {
            let mut m = CMat::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    let src = d - (i as i64 - j as i64);
                    m[(i, j)] = self.coeff(src)[(i, j)];
                }
            }
            if linalg::max_abs(&m) > 0.0 {
                if d.rem_euclid(2) != 0 {
                    return Err(Error::Argument(format!("loop is not twisted: odd degree {d} after untwisting")));
                }
                out.push((d / 2, m));
            }
        }
        if out.is_empty() {
            return Ok(Self::zero(2));
        }
        let lo = out.first().unwrap().0;
        let hi = out.last().unwrap().0;
        let mut coeffs = vec![CMat::zeros(2, 2); (hi - lo + 1) as usize];
        for (d, m) in out {
            coeffs[(d - lo) as usize] = m;
        }
        Self::new(2, lo, coeffs)
    }
}

pub(crate) fn circle_point(radius: f64, k: usize, n: usize) -> C {
    C::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / n as f64)
}

/// Values of a matrix loop at `radius * exp(2 pi i k / n)`, `n` a power of two.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleLoopSamples {
    dim: usize,
    radius: f64,
    values: Vec<CMat>,
}

/// Which reality condition `g(1/conj(zeta))^dagger = ...` a sampled loop is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RealForm {
    /// `-g(zeta)`: connection forms and Killing fields.
    SkewHermitian,
    /// `g(zeta)^{-1}`: frames.
    Unitary,
    /// `g(zeta)`: Gram loops.
    Hermitian,
}

impl CircleLoopSamples {
    pub fn new(dim: usize, radius: f64, values: Vec<CMat>) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Argument("sampling radius must be positive".into()));
        }
        if !values.len().is_power_of_two() {
            return Err(Error::Argument(format!("sample count {} is not a power of two", values.len())));
        }
        if values.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::Argument(format!("samples must be {dim}x{dim}")));
        }
        Ok(Self { dim, radius, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[CMat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<CMat> {
        self.values
    }

    pub fn zeta(&self, k: usize) -> C {
        circle_point(self.radius, k, self.values.len())
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Self { dim: self.dim, radius: self.radius, values }
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Self {
        Self { dim: self.dim, radius: self.radius, values: self.values.iter().map(f).collect() }
    }

    /// Matrix exponential at every sample.
    pub fn exp_pointwise(&self) -> Self {
        self.map(linalg::expm)
    }

    /// Entrywise DFT restricted to `[d_min, d_max]`, radius compensated. Returns the loop and the
    /// mass (sum over bins of the largest entry) of every DFT bin that falls outside the window.
    pub fn fourier_coefficients(&self, d_min: i64, d_max: i64) -> Result<(LaurentMatrixLoop, f64)> {
        let n = self.values.len();
        if d_max < d_min || (d_max - d_min) as usize >= n {
            return Err(Error::Argument(format!(
                "window [{d_min}, {d_max}] needs more than {n} samples"
            )));
        }
        let dim = self.dim;
        let mut bins = vec![CMat::zeros(dim, dim); n];
        let mut buf = vec![ZERO; n];
        for i in 0..dim {
            for j in 0..dim {
                for (b, v) in buf.iter_mut().zip(&self.values) {
                    *b = v[(i, j)];
                }
                linalg::fft_forward(&mut buf);
                for (bin, b) in bins.iter_mut().zip(&buf) {
                    bin[(i, j)] = b / n as f64;
                }
            }
        }
        let mut in_window = vec![false; n];
        let coeffs = (d_min..=d_max)
            .map(|d| {
                let j = d.rem_euclid(n as i64) as usize;
                in_window[j] = true;
                &bins[j] / C::from(self.radius.powi(d as i32))
            })
            .collect();
        let residual = bins
            .iter()
            .zip(&in_window)
            .filter(|(_, inside)| !**inside)
            .map(|(b, _)| linalg::max_abs(b))
            .sum();
        Ok((LaurentMatrixLoop::new(dim, d_min, coeffs)?, residual))
    }

    /// Reality and twist defects on the unit circle.
    ///
    /// The reality residual compares `g(zeta_k)^dagger` against the form selected by `form`
    /// (on `|zeta| = 1`, `1/conj(zeta) = zeta`). The twist residual is
    /// `max_k |g(-zeta_k) - tau g(zeta_k) tau|` with `tau = diag(1, -1)`.
    pub fn symmetry_residuals(&self, form: RealForm) -> Result<(f64, f64)> {
        if (self.radius - 1.0).abs() > 1e-12 {
            return Err(Error::Argument("symmetry residuals need samples on the unit circle".into()));
        }
        let n = self.values.len();
        if n % 2 != 0 {
            return Err(Error::Argument("symmetry residuals need an even sample count".into()));
        }
        let mut real = 0.0f64;
        for g in &self.values {
            let r = match form {
                RealForm::SkewHermitian => linalg::max_abs(&(g.adjoint() + g)),
                RealForm::Hermitian => linalg::max_abs_diff(&g.adjoint(), g),
                RealForm::Unitary => linalg::unitarity_defect(g),
            };
            real = real.max(r);
        }
        let tau = twist_matrix(self.dim);
        let mut twist = 0.0f64;
        for k in 0..n {
            let g = &self.values[k];
            let minus = &self.values[(k + n / 2) % n];
            twist = twist.max(linalg::max_abs_diff(minus, &(&tau * g * &tau)));
        }
        Ok((real, twist))
    }
}

fn twist_matrix(dim: usize) -> CMat {
    CMat::from_fn(dim, dim, |i, j| if i != j { ZERO } else if i == 0 { ONE } else { -ONE })
}

#[derive(Serialize, Deserialize)]
struct LoopDocument {
    dim: usize,
    d_min: i64,
    entries: Vec<[f64; 2]>,
}

impl Serialize for LaurentMatrixLoop {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut entries = Vec::with_capacity(self.coeffs.len() * self.dim * self.dim);
        for m in &self.coeffs {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let z = m[(i, j)];
                    entries.push([z.re, z.im]);
                }
            }
        }
        LoopDocument { dim: self.dim, d_min: self.d_min, entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LaurentMatrixLoop {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = LoopDocument::deserialize(d)?;
        let block = doc.dim * doc.dim;
        if block == 0 || doc.entries.is_empty() || doc.entries.len() % block != 0 {
            return Err(D::Error::custom("entry count is not a positive multiple of dim^2"));
        }
        let coeffs = doc
            .entries
            .chunks(block)
            .map(|chunk| CMat::from_row_iterator(doc.dim, doc.dim, chunk.iter().map(|[re, im]| C::new(*re, *im))))
            .collect();
        LaurentMatrixLoop::new(doc.dim, doc.d_min, coeffs).map_err(D::Error::custom)
    }
}
