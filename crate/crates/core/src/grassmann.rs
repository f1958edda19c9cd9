//! Totally equivariant pluri-harmonic maps `R^{2k} -> Gr_k(C^{n+1})` from rational spectral data
//! on the Riemann sphere.
//!
//! The spectral function is `lambda = alpha prod_j b_{P_j}^2 prod_i b_{E_i}` with Blaschke factors
//! `b_P(zeta) = (zeta - P)/(1 - conj(P) zeta)`. The map sends `z` to the span of
//! `v_l(z) = (f_l(O_1), f_l(O_2) gamma_1(z), ..., f_l(O_{n+1}) gamma_n(z))`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::DomainGrid;
use crate::linalg::{self, C, ONE, ZERO};

/// Double points `P_j`, simple points `E_i` inside the unit disk and a unimodular `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct P1SpectralData {
    double_points: Vec<C>,
    simple_points: Vec<C>,
    alpha: C,
}

#[derive(Serialize, Deserialize)]
struct P1Json {
    k: usize,
    n: usize,
    #[serde(rename = "P")]
    p: Vec<[f64; 2]>,
    #[serde(rename = "E", default)]
    e: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<[f64; 2]>,
}

fn blaschke(p: C, zeta: C) -> C {
    (zeta - p) / (ONE - p.conj() * zeta)
}

impl P1SpectralData {
    /// Data with `alpha` fixed by `lambda(1) = 1`.
    pub fn new(double_points: Vec<C>, simple_points: Vec<C>) -> Result<Self> {
        let mut d = Self::with_alpha(double_points, simple_points, ONE)?;
        let at_one = d.lambda(ONE)?;
        d.alpha = ONE / at_one;
        Ok(d)
    }

    pub fn with_alpha(double_points: Vec<C>, simple_points: Vec<C>, alpha: C) -> Result<Self> {
        if double_points.is_empty() {
            return Err(Error::Argument("at least one double point is needed (k >= 1)".into()));
        }
        if (alpha.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("alpha = {alpha} is not unimodular")));
        }
        let all: Vec<C> = double_points.iter().chain(&simple_points).copied().collect();
        if let Some(p) = all.iter().find(|p| p.norm() >= 1.0) {
            return Err(Error::Argument(format!("point {p} is not inside the unit disk")));
        }
        for (i, a) in all.iter().enumerate() {
            if all[..i].iter().any(|b| (a - b).norm() < 1e-12) {
                return Err(Error::Argument(format!("point {a} is repeated")));
            }
        }
        Ok(Self { double_points, simple_points, alpha })
    }

    pub fn k(&self) -> usize {
        self.double_points.len()
    }

    /// `n` with `n + 1 = 2k + #E` the degree of `lambda`.
    pub fn n(&self) -> usize {
        2 * self.k() + self.simple_points.len() - 1
    }

    pub fn double_points(&self) -> &[C] {
        &self.double_points
    }

    pub fn simple_points(&self) -> &[C] {
        &self.simple_points
    }

    pub fn alpha(&self) -> C {
        self.alpha
    }

    pub fn lambda(&self, zeta: C) -> Result<C> {
        lambda_eval(self, zeta)
    }

    /// Parses `{"k", "n", "P": [[re, im], ...], "E": [...], "alpha"?}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: P1Json = serde_json::from_str(text).map_err(|e| Error::Parse(format!("grassmann spec: {e}")))?;
        let pts = |v: &[[f64; 2]]| v.iter().map(|x| C::new(x[0], x[1])).collect::<Vec<_>>();
        let data = match j.alpha {
            Some(a) => Self::with_alpha(pts(&j.p), pts(&j.e), C::new(a[0], a[1]))?,
            None => Self::new(pts(&j.p), pts(&j.e))?,
        };
        if data.k() != j.k || data.n() != j.n {
            return Err(Error::Argument(format!(
                "k = {}, n = {} do not match {} double and {} simple points",
                j.k,
                j.n,
                data.k(),
                data.simple_points.len()
            )));
        }
        Ok(data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let pts = |v: &[C]| v.iter().map(|x| [x.re, x.im]).collect();
        let j = P1Json {
            k: self.k(),
            n: self.n(),
            p: pts(&self.double_points),
            e: pts(&self.simple_points),
            alpha: Some([self.alpha.re, self.alpha.im]),
        };
        serde_json::to_string_pretty(&j).expect("plain data serializes")
    }

    /// Numerator of `lambda - 1`, ascending coefficients of degree `n + 1`.
    fn fiber_polynomial(&self) -> Vec<C> {
        let mut num = vec![self.alpha];
        let mut den = vec![ONE];
        for (p, mult) in self.points_with_multiplicity() {
            for _ in 0..mult {
                num = linalg::poly_mul(&num, &[-p, ONE]);
                den = linalg::poly_mul(&den, &[ONE, -p.conj()]);
            }
        }
        num.iter().zip(&den).map(|(a, b)| a - b).collect()
    }

    fn points_with_multiplicity(&self) -> impl Iterator<Item = (C, usize)> + '_ {
        self.double_points.iter().map(|&p| (p, 2)).chain(self.simple_points.iter().map(|&e| (e, 1)))
    }
}

/// `lambda(zeta)`; `zeta = 1/conj(P)` for a nonzero `P` or `E` is a pole.
pub fn lambda_eval(data: &P1SpectralData, zeta: C) -> Result<C> {
    let mut v = data.alpha;
    for (p, mult) in data.points_with_multiplicity() {
        if (ONE - p.conj() * zeta).norm() < 1e-14 {
            return Err(Error::Domain(format!("zeta = {zeta} is a pole of lambda")));
        }
        v *= blaschke(p, zeta).powu(mult as u32);
    }
    Ok(v)
}

/// `d lambda / d zeta`.
pub fn lambda_derivative(data: &P1SpectralData, zeta: C) -> Result<C> {
    // lambda' = sum_p mult b_p^{mult-1} b_p' prod_{other} ...; use the product rule directly
    let mut value = data.alpha;
    let mut deriv = ZERO;
    for (p, mult) in data.points_with_multiplicity() {
        let den = ONE - p.conj() * zeta;
        if den.norm() < 1e-14 {
            return Err(Error::Domain(format!("zeta = {zeta} is a pole of lambda")));
        }
        let b = (zeta - p) / den;
        let db = (1.0 - p.norm_sqr()) / (den * den);
        let (f, df) = if mult == 2 { (b * b, 2.0 * b * db) } else { (b, db) };
        deriv = deriv * f + value * df;
        value *= f;
    }
    Ok(deriv)
}

/// The `n + 1` points over `lambda = 1`: `O_1` closest to 1, the rest in counterclockwise order from `O_1`.
pub fn fiber_over_one(data: &P1SpectralData) -> Result<Vec<C>> {
    let poly = data.fiber_polynomial();
    let mut roots = linalg::polynomial_roots(&poly);
    if roots.len() != data.n() + 1 {
        return Err(Error::DegenerateFiber(format!("{} roots for degree {}", roots.len(), data.n() + 1)));
    }
    for r in roots.iter_mut() {
        // Newton on lambda - 1 itself
        for _ in 0..3 {
            let f = lambda_eval(data, *r)? - ONE;
            let df = lambda_derivative(data, *r)?;
            if df.norm() == 0.0 {
                break;
            }
            *r -= f / df;
        }
    }
    for (i, a) in roots.iter().enumerate() {
        if roots[..i].iter().any(|b| (a - b).norm() < 1e-6) {
            return Err(Error::DegenerateFiber(format!("lambda - 1 has a multiple root near {a}")));
        }
    }
    let first = (0..roots.len())
        .min_by(|&a, &b| (roots[a] - ONE).norm().total_cmp(&(roots[b] - ONE).norm()))
        .expect("at least one root");
    let o1 = roots.remove(first);
    let turn = |z: &C| {
        let a = (z / o1).arg();
        if a < 0.0 {
            a + 2.0 * std::f64::consts::PI
        } else {
            a
        }
    };
    roots.sort_by(|a, b| turn(a).total_cmp(&turn(b)));
    roots.insert(0, o1);
    Ok(roots)
}

/// Which fiber point the `m`-th coordinate pairs with in `U_{jm}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiberIndexing {
    /// `U_{jm} = 1/(P_j - O_{m+1}) - 1/(P_j - O_1)`, matching the basis of differentials.
    #[default]
    Shifted,
    /// `U_{jm} = 1/(P_j - O_m) - 1/(P_j - O_1)` as printed; its first column vanishes.
    Literal,
}

/// The `k x n` frequency matrix.
pub fn frequency_matrix(data: &P1SpectralData, fibers: &[C], indexing: FiberIndexing) -> DMatrix<C> {
    let n = fibers.len() - 1;
    DMatrix::from_fn(data.k(), n, |j, m| {
        let p = data.double_points[j];
        let o = match indexing {
            FiberIndexing::Shifted => fibers[m + 1],
            FiberIndexing::Literal => fibers[m],
        };
        ONE / (p - o) - ONE / (p - fibers[0])
    })
}

/// `gamma_m(z) = exp(sum_j (z_j U_{jm} - conj(z_j U_{jm})))`, unimodular because each exponent
/// is `2i Im(z_j U_{jm})`.
pub fn gamma_hom(u: &DMatrix<C>, z: &[C]) -> Result<Vec<C>> {
    if z.len() != u.nrows() {
        return Err(Error::Argument(format!("{} coordinates for k = {}", z.len(), u.nrows())));
    }
    Ok((0..u.ncols())
        .map(|m| {
            let w: C = z.iter().enumerate().map(|(j, zj)| zj * u[(j, m)]).sum();
            (w - w.conj()).exp()
        })
        .collect())
}

/// A point of the Riemann sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpherePoint {
    Finite(C),
    Infinity,
}

/// Ramification of `lambda` over `|lambda| > 1`, with multiplicity: the poles `1/conj(P_j)` and
/// the critical points outside the unit disk (`infinity` when the degree count drops).
pub fn ramification_plus(data: &P1SpectralData) -> Result<Vec<SpherePoint>> {
    // lambda'/lambda = sum mult (1 - |p|^2) / ((zeta - p)(1 - conj(p) zeta))
    let factors: Vec<(Vec<C>, f64)> = data
        .points_with_multiplicity()
        .map(|(p, mult)| (linalg::poly_mul(&[-p, ONE], &[ONE, -p.conj()]), mult as f64 * (1.0 - p.norm_sqr())))
        .collect();
    let mut num = vec![ZERO];
    for i in 0..factors.len() {
        let mut term = vec![C::from(factors[i].1)];
        for (j, (f, _)) in factors.iter().enumerate() {
            if j != i {
                term = linalg::poly_mul(&term, f);
            }
        }
        if term.len() > num.len() {
            num.resize(term.len(), ZERO);
        }
        for (a, b) in num.iter_mut().zip(&term) {
            *a += b;
        }
    }
    let expected = 2 * (factors.len() - 1);
    let scale = num.iter().map(|c| c.norm()).fold(0.0, f64::max);
    while num.len() > 1 && num.last().map_or(false, |c| c.norm() <= 1e-14 * scale) {
        num.pop();
    }
    let finite = linalg::polynomial_roots(&num);
    let mut out = Vec::new();
    for c in &finite {
        let l = lambda_eval(data, *c)?.norm();
        if (l - 1.0).abs() < 1e-8 {
            return Err(Error::BoundaryRamification(*c));
        }
        if l > 1.0 {
            out.push(SpherePoint::Finite(*c));
        }
    }
    out.extend(std::iter::repeat(SpherePoint::Infinity).take(expected - finite.len()));
    for p in &data.double_points {
        out.push(pole_of(*p));
    }
    if out.len() != data.n() {
        return Err(Error::DivisorDegree(format!("R_+ has {} points, expected n = {}", out.len(), data.n())));
    }
    Ok(out)
}

/// `1/conj(p)`, the reflection of `p` in the unit circle.
fn pole_of(p: C) -> SpherePoint {
    if p.norm() == 0.0 {
        SpherePoint::Infinity
    } else {
        SpherePoint::Finite(ONE / p.conj())
    }
}

/// `D_l = 2 Q_1 + ... + Q_l + ... + 2 Q_k + sum_i 1/conj(E_i)` with `Q_j = 1/conj(P_j)`.
pub fn divisor_d(data: &P1SpectralData, l: usize) -> Vec<SpherePoint> {
    let mut d = Vec::with_capacity(data.n());
    for (j, p) in data.double_points.iter().enumerate() {
        let q = pole_of(*p);
        d.push(q);
        if j != l {
            d.push(q);
        }
    }
    d.extend(data.simple_points.iter().map(|e| pole_of(*e)));
    d
}

/// `f_l(O_m)` where `f_l` spans the sections of `O(R_+ - D_l)`: as a function it vanishes on
/// `D_l` and has its poles on `R_+`, `f_l = prod_{D_l} (zeta - d) / prod_{R_+} (zeta - r)` with
/// factors at infinity left out. Row `l`, column `m`.
pub fn section_functions(data: &P1SpectralData, fibers: &[C], r_plus: &[SpherePoint]) -> Result<DMatrix<C>> {
    let mut out = DMatrix::zeros(data.k(), fibers.len());
    for l in 0..data.k() {
        let d = divisor_d(data, l);
        if d.len() != r_plus.len() {
            return Err(Error::DivisorDegree(format!("deg D_{} = {} but deg R_+ = {}", l + 1, d.len(), r_plus.len())));
        }
        for (m, o) in fibers.iter().enumerate() {
            let mut v = ONE;
            for q in &d {
                if let SpherePoint::Finite(q) = q {
                    v *= o - q;
                }
            }
            for r in r_plus {
                if let SpherePoint::Finite(r) = r {
                    v /= o - r;
                }
            }
            out[(l, m)] = v;
        }
    }
    Ok(out)
}

/// Everything the map needs: fibers, frequencies, section values and the diagonal generators.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivariantMapData {
    pub fiber_points: Vec<C>,
    pub frequency_matrix: DMatrix<C>,
    pub section_values: DMatrix<C>,
    /// Diagonals of `D_j = diag(0, U_{j1}, ..., U_{jn})`.
    pub diag_frame: Vec<Vec<C>>,
}

impl EquivariantMapData {
    pub fn new(data: &P1SpectralData, indexing: FiberIndexing) -> Result<Self> {
        let fibers = fiber_over_one(data)?;
        let u = frequency_matrix(data, &fibers, indexing);
        let r = ramification_plus(data)?;
        let sections = section_functions(data, &fibers, &r)?;
        let diag_frame = (0..data.k())
            .map(|j| std::iter::once(ZERO).chain(u.row(j).iter().copied()).collect())
            .collect();
        Ok(Self { fiber_points: fibers, frequency_matrix: u, section_values: sections, diag_frame })
    }

    pub fn k(&self) -> usize {
        self.section_values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.section_values.ncols()
    }

    /// Diagonal of `G(z) = prod_j exp(z_j D_j - conj(z_j) D_j^dagger)`.
    pub fn group_element(&self, z: &[C]) -> Result<Vec<C>> {
        let gamma = gamma_hom(&self.frequency_matrix, z)?;
        Ok(std::iter::once(ONE).chain(gamma).collect())
    }
}

/// A `k`-plane given by its orthogonal projection and unit Plucker vector (minors in
/// lexicographic order of row subsets, phase fixed by making the largest entry real positive).
#[derive(Clone, Debug, PartialEq)]
pub struct KPlane {
    pub projection: DMatrix<C>,
    pub plucker: Vec<C>,
}

/// Span of the rows of `v` (k x (n+1)); `z` is only used for error reporting.
pub fn plane_from_rows(v: &DMatrix<C>, z: &[C]) -> Result<KPlane> {
    let cols = v.transpose();
    let svd = cols.clone().svd(false, false);
    let (lo, hi) = svd.singular_values.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::DegeneratePlane(z.to_vec()));
    }
    let q = cols.clone().qr().q();
    let projection = &q * q.adjoint();
    let k = v.nrows();
    let mut plucker = Vec::new();
    for rows in combinations(v.ncols(), k) {
        let minor = DMatrix::from_fn(k, k, |a, b| cols[(rows[a], b)]);
        plucker.push(minor.determinant());
    }
    let norm = plucker.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let big = plucker.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("nonempty");
    let phase = big.conj() / big.norm();
    for c in plucker.iter_mut() {
        *c *= phase / norm;
    }
    Ok(KPlane { projection, plucker })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// `v_l(z)` as the rows of a `k x (n+1)` matrix for given multipliers `(1, gamma_1, ..., gamma_n)`.
pub fn section_rows(map: &EquivariantMapData, multipliers: &[C]) -> DMatrix<C> {
    DMatrix::from_fn(map.k(), map.dim(), |l, m| map.section_values[(l, m)] * multipliers[m])
}

/// `phi(z) = [v_1 ^ ... ^ v_k]`.
pub fn pluriharmonic_map(map: &EquivariantMapData, z: &[C]) -> Result<KPlane> {
    let g = map.group_element(z)?;
    plane_from_rows(&section_rows(map, &g), z)
}

/// Largest `||[Delta Pi, Pi]||` over interior points of `grid` for the projection-valued map
/// `t -> projection(t)` (five-point Laplacian in `t = x + iy`).
pub fn projection_harmonicity<F>(grid: &DomainGrid, projection: F) -> Result<f64>
where
    F: Fn(C) -> Result<DMatrix<C>> + Sync,
{
    if grid.nx < 3 || grid.ny < 3 {
        return Err(Error::Argument("harmonicity needs at least 3 x 3 grid points".into()));
    }
    let values: Vec<DMatrix<C>> = (0..grid.len()).into_par_iter().map(|p| projection(grid.point(p))).collect::<Result<_>>()?;
    let (hx, hy) = (grid.hx(), grid.hy());
    let worst = (1..grid.ny - 1)
        .into_par_iter()
        .map(|iy| {
            let mut w = 0.0f64;
            for ix in 1..grid.nx - 1 {
                let c = &values[grid.index(ix, iy)];
                let lap = (&values[grid.index(ix - 1, iy)] + &values[grid.index(ix + 1, iy)] - c * C::from(2.0)) / C::from(hx * hx)
                    + (&values[grid.index(ix, iy - 1)] + &values[grid.index(ix, iy + 1)] - c * C::from(2.0)) / C::from(hy * hy);
                let comm = &lap * c - c * &lap;
                w = w.max(comm.iter().map(|x| x.norm()).fold(0.0, f64::max));
            }
            w
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Tension-field residual of the restriction of the map to the complex line `t -> t a`.
pub fn harmonicity_residual(map: &EquivariantMapData, direction: &[C], grid: &DomainGrid) -> Result<f64> {
    if direction.len() != map.k() || direction.iter().all(|a| a.norm() == 0.0) {
        return Err(Error::Argument("direction must be a nonzero vector of length k".into()));
    }
    projection_harmonicity(grid, |t| {
        let z: Vec<C> = direction.iter().map(|a| a * t).collect();
        Ok(pluriharmonic_map(map, &z)?.projection)
    })
}

/// `|sum_j a_j^2|`; zero marks the directions on which the restricted map is conformal.
pub fn conformality_indicator(direction: &[C]) -> f64 {
    direction.iter().map(|a| a * a).sum::<C>().norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, I};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn squared() -> P1SpectralData {
        P1SpectralData::new(vec![ZERO], vec![]).unwrap()
    }

    fn random_disk_point(rng: &mut ChaCha8Rng) -> C {
        C::from_polar(rng.gen_range(0.1..0.8), rng.gen_range(0.0..std::f64::consts::TAU))
    }

    fn random_data(rng: &mut ChaCha8Rng, k: usize, m: usize) -> P1SpectralData {
        P1SpectralData::new((0..k).map(|_| random_disk_point(rng)).collect(), (0..m).map(|_| random_disk_point(rng)).collect()).unwrap()
    }

    fn max_diff(a: &DMatrix<C>, b: &DMatrix<C>) -> f64 {
        (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn lambda_of_the_squared_case() {
        let d = squared();
        assert_eq!((d.k(), d.n()), (1, 1));
        assert!((lambda_eval(&d, I).unwrap() + ONE).norm() < 1e-15);
        assert!(lambda_eval(&P1SpectralData::new(vec![c(0.5, 0.0)], vec![]).unwrap(), c(2.0, 0.0)).is_err());
    }

    #[test]
    fn lambda_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_data(&mut rng, 2, 1);
        for t in 0..20 {
            let z = C::from_polar(1.0, 0.3 * t as f64);
            assert!((lambda_eval(&d, z).unwrap().norm() - 1.0).abs() < 1e-12);
        }
        for p in d.double_points() {
            assert!(lambda_eval(&d, *p).unwrap().norm() < 1e-15);
            assert!(lambda_derivative(&d, *p).unwrap().norm() < 1e-10);
        }
        let z = c(0.2, 0.1);
        let h = 1e-6;
        let fd = (lambda_eval(&d, z + h).unwrap() - lambda_eval(&d, z - h).unwrap()) / (2.0 * h);
        assert!((fd - lambda_derivative(&d, z).unwrap()).norm() < 1e-8);
        assert!((lambda_eval(&d, ONE).unwrap() - ONE).norm() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(P1SpectralData::new(vec![c(1.0, 0.0)], vec![]).is_err());
        assert!(P1SpectralData::new(vec![c(0.1, 0.0)], vec![c(0.1, 0.0)]).is_err());
        assert!(P1SpectralData::new(vec![], vec![c(0.1, 0.0)]).is_err());
        assert!(P1SpectralData::with_alpha(vec![ZERO], vec![], c(0.5, 0.0)).is_err());
        let text = r#"{"k": 1, "n": 2, "P": [[0.0, 0.0]], "E": [[0.5, 0.0]]}"#;
        let d = P1SpectralData::from_json(text).unwrap();
        assert_eq!(P1SpectralData::from_json(&d.to_json()).unwrap(), d);
        assert!(P1SpectralData::from_json(r#"{"k": 2, "n": 2, "P": [[0.0, 0.0]], "E": [[0.5, 0.0]]}"#).is_err());
    }

    #[test]
    fn fibers() {
        let o = fiber_over_one(&squared()).unwrap();
        assert!((o[0] - ONE).norm() < 1e-14 && (o[1] + ONE).norm() < 1e-14);
        let d = P1SpectralData::new(vec![ZERO], vec![c(0.5, 0.0)]).unwrap();
        let o = fiber_over_one(&d).unwrap();
        assert_eq!(o.len(), 3);
        for z in &o {
            assert!((z.norm() - 1.0).abs() < 1e-10);
            assert!((lambda_eval(&d, *z).unwrap() - ONE).norm() < 1e-10);
        }
        assert!((o[0] - ONE).norm() < 1e-12);
        // conditioning
        let moved = P1SpectralData::new(vec![c(1e-8, 0.0)], vec![c(0.5, 0.0)]).unwrap();
        for (a, b) in o.iter().zip(&fiber_over_one(&moved).unwrap()) {
            assert!((a - b).norm() <= 1e-6);
        }
    }

    #[test]
    fn frequencies_and_gamma() {
        let d = squared();
        let o = fiber_over_one(&d).unwrap();
        let u = frequency_matrix(&d, &o, FiberIndexing::Shifted);
        assert!((u[(0, 0)] - c(2.0, 0.0)).norm() < 1e-14);
        let lit = frequency_matrix(&d, &o, FiberIndexing::Literal);
        assert!(lit[(0, 0)].norm() < 1e-15);
        let z = c(0.3, 0.7);
        let g = gamma_hom(&u, &[z]).unwrap();
        assert!((g[0] - C::from_polar(1.0, 4.0 * 0.7)).norm() < 1e-13);
        assert_eq!(gamma_hom(&u, &[ZERO]).unwrap(), vec![ONE]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_data(&mut rng, 2, 1);
        let o = fiber_over_one(&d).unwrap();
        let u = frequency_matrix(&d, &o, FiberIndexing::Shifted);
        for j in 0..2 {
            assert!(u.row(j).iter().any(|x| x.norm() > 1e-8));
        }
        let (a, b) = ([c(0.2, -0.4), c(1.1, 0.3)], [c(-0.7, 0.5), c(0.05, 0.9)]);
        let ab: Vec<C> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (ga, gb, gab) = (gamma_hom(&u, &a).unwrap(), gamma_hom(&u, &b).unwrap(), gamma_hom(&u, &ab).unwrap());
        for m in 0..u.ncols() {
            assert!((ga[m] * gb[m] - gab[m]).norm() < 1e-13);
            assert!((ga[m].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn conjugation_symmetric_rows() {
        let d = P1SpectralData::new(vec![c(0.3, 0.0)], vec![c(-0.4, 0.0), c(0.6, 0.0)]).unwrap();
        let o = fiber_over_one(&d).unwrap();
        let u = frequency_matrix(&d, &o, FiberIndexing::Shifted);
        for m in 0..u.ncols() {
            let w = u[(0, m)].conj();
            assert!(u.row(0).iter().any(|x| (x - w).norm() < 1e-10));
        }
    }

    #[test]
    fn ramification_counts() {
        assert_eq!(ramification_plus(&squared()).unwrap(), vec![SpherePoint::Infinity]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (k, m) in [(1, 1), (2, 1), (1, 3), (2, 2)] {
            let d = random_data(&mut rng, k, m);
            let r = ramification_plus(&d).unwrap();
            assert_eq!(r.len(), d.n());
            for l in 0..k {
                assert_eq!(divisor_d(&d, l).len(), d.n());
            }
            for p in &r {
                if let SpherePoint::Finite(z) = p {
                    assert!(z.norm() > 1.0);
                }
            }
        }
    }

    #[test]
    fn ramification_on_the_circle_is_rejected() {
        // a simple point outside the disk bends the logarithmic derivative to zero on |zeta| = 1
        let d = P1SpectralData { double_points: vec![ZERO], simple_points: vec![c(2.0, 0.0)], alpha: ONE };
        assert!(matches!(ramification_plus(&d), Err(Error::BoundaryRamification(_))));
    }

    #[test]
    fn sections_of_the_squared_case() {
        let d = squared();
        let o = fiber_over_one(&d).unwrap();
        let s = section_functions(&d, &o, &ramification_plus(&d).unwrap()).unwrap();
        assert_eq!(s[(0, 0)], s[(0, 1)]);
        assert!(section_functions(&d, &o, &[]).is_err());
    }

    #[test]
    fn squared_case_is_a_great_circle() {
        let map = EquivariantMapData::new(&squared(), FiberIndexing::Shifted).unwrap();
        assert_eq!(map.diag_frame, vec![vec![ZERO, c(2.0, 0.0)]]);
        for y in [0.0, 0.3, 1.1] {
            let z = c(0.4, y);
            let plane = pluriharmonic_map(&map, &[z]).unwrap();
            let want = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), C::from_polar(0.5, -4.0 * y), C::from_polar(0.5, 4.0 * y), c(0.5, 0.0)]);
            assert!(max_diff(&plane.projection, &want) < 1e-14);
            let ratio = plane.plucker[1] / plane.plucker[0];
            assert!((ratio - C::from_polar(1.0, 4.0 * y)).norm() < 1e-14);
        }
    }

    #[test]
    fn equivariance_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, m) in [(1, 1), (2, 1)] {
            let d = random_data(&mut rng, k, m);
            let map = EquivariantMapData::new(&d, FiberIndexing::Shifted).unwrap();
            let zero = vec![ZERO; k];
            let p0 = pluriharmonic_map(&map, &zero).unwrap().projection;
            let rows = plane_from_rows(&map.section_values, &zero).unwrap().projection;
            assert!(max_diff(&p0, &rows) < 1e-12);
            let mut scaled = map.clone();
            scaled.section_values.row_mut(0).scale_mut(5.0);
            for _ in 0..5 {
                let z: Vec<C> = (0..k).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                let pz = pluriharmonic_map(&map, &z).unwrap().projection;
                let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(map.group_element(&z).unwrap()));
                let conj = &g * &p0 * g.adjoint();
                assert!(max_diff(&pz, &conj) < 1e-10);
                // G is unitary here
                assert!(max_diff(&(&g * g.adjoint()), &DMatrix::identity(map.dim(), map.dim())) < 1e-13);
                assert!(max_diff(&pluriharmonic_map(&scaled, &z).unwrap().projection, &pz) < 1e-12);
            }
        }
    }

    #[test]
    fn harmonicity_and_negative_control() {
        let map = EquivariantMapData::new(&squared(), FiberIndexing::Shifted).unwrap();
        let grid = DomainGrid::new(c(0.1, 0.1), c(0.15, 0.15), 6, 6).unwrap();
        assert!(harmonicity_residual(&map, &[ONE], &grid).unwrap() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = random_data(&mut rng, 2, 1);
        let map = EquivariantMapData::new(&d, FiberIndexing::Shifted).unwrap();
        let dir = [ONE, I];
        let r: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&h| {
                let g = DomainGrid::new(c(0.1 - h, 0.2 - h), c(0.1 + h, 0.2 + h), 3, 3).unwrap();
                harmonicity_residual(&map, &dir, &g).unwrap()
            })
            .collect();
        for w in r.windows(2) {
            assert!((3.0..=5.0).contains(&(w[0] / w[1])), "{r:?}");
        }
        // gamma_m = exp(i c_m |t|^2) is not a homomorphism
        let g = DomainGrid::new(c(0.09, 0.19), c(0.11, 0.21), 3, 3).unwrap();
        let control = projection_harmonicity(&g, |t| {
            let mult: Vec<C> = (0..map.dim()).map(|m| C::from_polar(1.0, (m as f64 + 1.0) * t.norm_sqr())).collect();
            Ok(plane_from_rows(&section_rows(&map, &mult), &[t])?.projection)
        })
        .unwrap();
        assert!(control > 1e-2 && control > 1e3 * r[2], "{control} {r:?}");

        // sections vanishing on R_+ instead of D_l break harmonicity
        let mut flipped = map.clone();
        flipped.section_values.iter_mut().for_each(|v| *v = v.inv());
        assert!(harmonicity_residual(&flipped, &dir, &g).unwrap() > 1e-2);
    }

    #[test]
    fn conformality() {
        assert_eq!(conformality_indicator(&[ONE, I]), 0.0);
        assert_eq!(conformality_indicator(&[ONE, ZERO]), 1.0);
        assert_eq!(conformality_indicator(&[ONE, ONE]), 2.0);
    }

    #[test]
    fn degenerate_plane_is_reported() {
        let v = DMatrix::from_row_slice(2, 3, &[ONE, ONE, ZERO, c(2.0, 0.0), c(2.0, 0.0), ZERO]);
        assert!(matches!(plane_from_rows(&v, &[ZERO, ZERO]), Err(Error::DegeneratePlane(_))));
    }
}
