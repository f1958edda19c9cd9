//! Spectral data of finite-type harmonic maps: hyperelliptic branch points, nodal (bubbleton)
//! data, the initial polynomial Killing field and the dressing matrices built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C, ONE, ZERO};
use crate::loops::LaurentMatrixLoop;

/// Branch points `a_j` of the curve `y^2 = lambda prod (lambda - a_j)(1 - conj(a_j) lambda)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperellipticSpectralData {
    branch_points: Vec<C>,
    nodal: bool,
}

impl HyperellipticSpectralData {
    pub fn new(branch_points: Vec<C>) -> Result<Self> {
        Self::build(branch_points, false)
    }

    /// Like [`new`](Self::new) but allows repeated branch points (singular curves).
    pub fn new_nodal(branch_points: Vec<C>) -> Result<Self> {
        Self::build(branch_points, true)
    }

    fn build(branch_points: Vec<C>, nodal: bool) -> Result<Self> {
        for a in &branch_points {
            let r = a.norm();
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Argument(format!("branch point {a} must satisfy 0 < |a| < 1")));
            }
        }
        if !nodal {
            for (i, a) in branch_points.iter().enumerate() {
                if branch_points[..i].iter().any(|b| (a - b).norm() < 1e-12) {
                    return Err(Error::Argument(format!("repeated branch point {a} on a smooth curve")));
                }
            }
        }
        Ok(Self { branch_points, nodal })
    }

    pub fn vacuum() -> Self {
        Self { branch_points: Vec::new(), nodal: false }
    }

    pub fn branch_points(&self) -> &[C] {
        &self.branch_points
    }

    pub fn genus(&self) -> usize {
        self.branch_points.len()
    }

    pub fn is_nodal(&self) -> bool {
        self.nodal
    }

    /// Ascending coefficients of `prod (1 - conj(a_j) lambda)`.
    pub fn p_polynomial(&self) -> Vec<C> {
        self.branch_points.iter().fold(vec![ONE], |acc, a| linalg::poly_mul(&acc, &[ONE, -a.conj()]))
    }

    /// Ascending coefficients of `prod (lambda - a_j)`.
    pub fn q_polynomial(&self) -> Vec<C> {
        self.branch_points.iter().fold(vec![ONE], |acc, a| linalg::poly_mul(&acc, &[-*a, ONE]))
    }

    /// Smallest `|a_j|^{1/2}`, the radius of the disk on which the dressing matrix is defined.
    pub fn dressing_radius(&self) -> f64 {
        self.branch_points.iter().map(|a| a.norm().sqrt()).fold(1.0, f64::min)
    }

    pub fn to_json(&self) -> String {
        let doc = HyperellipticDocument {
            genus: self.genus(),
            branch_points: self.branch_points.iter().map(|z| [z.re, z.im]).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("spectral data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HyperellipticDocument = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.genus != doc.branch_points.len() {
            return Err(Error::Parse(format!(
                "genus {} does not match {} branch points",
                doc.genus,
                doc.branch_points.len()
            )));
        }
        Self::new(doc.branch_points.iter().map(|p| C::new(p[0], p[1])).collect())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct HyperellipticDocument {
    genus: usize,
    branch_points: Vec<[f64; 2]>,
}

/// `eta = [[0, zeta P(zeta^2)], [zeta Q(zeta^2), 0]]`, supported in odd degrees `1..=2g+1`.
pub fn eta_polynomial(data: &HyperellipticSpectralData) -> LaurentMatrixLoop {
    let g = data.genus();
    let p = data.p_polynomial();
    let q = data.q_polynomial();
    let coeffs = (0..=2 * g)
        .map(|k| {
            let mut m = CMat::zeros(2, 2);
            if k % 2 == 0 {
                m[(0, 1)] = p[k / 2];
                m[(1, 0)] = q[k / 2];
            }
            m
        })
        .collect();
    LaurentMatrixLoop::new(2, 1, coeffs).expect("2x2 coefficients")
}

/// Initial Killing field `xi(0) = eta - dagger_flip(eta)`.
pub fn xi_initial(data: &HyperellipticSpectralData) -> LaurentMatrixLoop {
    let eta = eta_polynomial(data);
    eta.sub(&eta.dagger_flip())
}

/// `h(0)^{-1/2}` (principal root) with `h(0) = prod(-a_j)`. Scaling the Symes exponent by this
/// constant gives the frame a unit Hopf differential, the normalization the dressed vacuum has.
pub fn symes_scale(data: &HyperellipticSpectralData) -> C {
    let h0: C = data.branch_points.iter().map(|a| -a).product();
    let h0 = C::new(h0.re, h0.im + 0.0);
    h0.sqrt().inv()
}

/// Exponent of the Symes construction per unit `z`: `c zeta^{2g} dagger_flip(eta)` with
/// `c` from [`symes_scale`]. Its support is `[-1, 2g-1]`; for `g = 0` it is `zeta^{-1} A`.
pub fn symes_exponent(data: &HyperellipticSpectralData) -> LaurentMatrixLoop {
    eta_polynomial(data).dagger_flip().shift(2 * data.genus() as i64).scale(symes_scale(data))
}

/// [`symes_exponent`] conjugated by `diag(1, zeta)` and written in `lambda = zeta^2`:
/// `c [[0, lambda^{-1} P(lambda)], [Q(lambda), 0]]`.
pub fn symes_exponent_untwisted(data: &HyperellipticSpectralData) -> LaurentMatrixLoop {
    let g = data.genus();
    let p = data.p_polynomial();
    let q = data.q_polynomial();
    let scale = symes_scale(data);
    let coeffs = (0..=g + 1)
        .map(|k| {
            // degree k - 1
            let mut m = CMat::zeros(2, 2);
            if k <= g {
                m[(0, 1)] = p[k] * scale;
            }
            if k >= 1 {
                m[(1, 0)] = q[k - 1] * scale;
            }
            m
        })
        .collect();
    LaurentMatrixLoop::new(2, -1, coeffs).expect("2x2 coefficients")
}

/// `y^2(lambda) = lambda prod (lambda - a_j)(1 - conj(a_j) lambda)`.
pub fn curve_discriminant(data: &HyperellipticSpectralData, lambda: C) -> C {
    data.branch_points
        .iter()
        .fold(lambda, |acc, a| acc * (lambda - a) * (ONE - a.conj() * lambda))
}

/// `diag(h^{-1/4}, h^{1/4})` with `h = prod (zeta^2 - a_j) / (1 - conj(a_j) zeta^2)`.
///
/// Defined on `|zeta| < min |a_j|^{1/2}`, where the root is continued from the principal value at
/// `zeta = 0`, and on `|zeta| > 1 / min |a_j|^{1/2}` by the reality condition
/// `g(zeta) = (g(1/conj(zeta))^dagger)^{-1}`.
pub fn dressing_matrix(data: &HyperellipticSpectralData, zeta: C) -> Result<CMat> {
    let rho = data.dressing_radius();
    let r = zeta.norm();
    if data.genus() == 0 {
        return Ok(CMat::identity(2, 2));
    }
    let fourth_root = |w: C| -> C {
        // h(w) = h(0) prod (1 - w^2/a_j) / (1 - conj(a_j) w^2), all logarithms principal
        let w2 = w * w;
        let h0: C = data.branch_points.iter().map(|a| -a).product();
        // a signed zero imaginary part would select the other side of the branch cut
        let h0 = C::new(h0.re, h0.im + 0.0);
        let log_sum: C = data
            .branch_points
            .iter()
            .map(|a| (ONE - w2 / a).ln() - (ONE - a.conj() * w2).ln())
            .sum();
        h0.powf(0.25) * (log_sum * 0.25).exp()
    };
    let s = if r < rho {
        fourth_root(zeta)
    } else if r > 1.0 / rho {
        let inner = fourth_root(ONE / zeta.conj());
        ONE / inner.conj()
    } else {
        return Err(Error::Domain(format!(
            "|zeta| = {r} lies in the annulus [{rho}, {}] where the dressing matrix is not defined",
            1.0 / rho
        )));
    };
    Ok(CMat::from_row_slice(2, 2, &[ONE / s, ZERO, ZERO, s]))
}

/// Nodal curve `mu^2 = lambda prod (lambda - a_j)^2 (1 - a_j lambda)^2` with nodes `a_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalSpectralData {
    nodes: Vec<C>,
    real_flag: bool,
}

impl NodalSpectralData {
    pub fn new(nodes: Vec<C>) -> Result<Self> {
        for a in &nodes {
            let r = a.norm();
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Argument(format!("node {a} must satisfy 0 < |a| < 1")));
            }
        }
        let real_flag = nodes.iter().all(|a| a.im == 0.0 && a.re > 0.0 && a.re < 1.0);
        Ok(Self { nodes, real_flag })
    }

    pub fn nodes(&self) -> &[C] {
        &self.nodes
    }

    pub fn r(&self) -> usize {
        self.nodes.len()
    }

    pub fn arithmetic_genus(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn real_flag(&self) -> bool {
        self.real_flag
    }

    /// `(r_j, theta_j)` with `a_j = r_j^2 e^{2 i theta_j}`.
    pub fn polar(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|a| (a.norm().sqrt(), a.arg() / 2.0)).collect()
    }

    /// The same curve seen as a degenerate hyperelliptic curve: every node is a double branch point.
    pub fn to_hyperelliptic(&self) -> HyperellipticSpectralData {
        let doubled = self.nodes.iter().flat_map(|a| [*a, *a]).collect();
        HyperellipticSpectralData::new_nodal(doubled).expect("nodes already validated")
    }

    pub fn to_json(&self, lobes: Option<&LobeCounts>) -> String {
        let doc = NodalDocument {
            r: self.r(),
            nodes: self.nodes.iter().map(|z| [z.re, z.im]).collect(),
            lobes: lobes.map(|l| l.p.clone()),
        };
        serde_json::to_string_pretty(&doc).expect("spectral data serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<LobeCounts>)> {
        let doc: NodalDocument = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.r != doc.nodes.len() {
            return Err(Error::Parse(format!("r = {} does not match {} nodes", doc.r, doc.nodes.len())));
        }
        let data = Self::new(doc.nodes.iter().map(|p| C::new(p[0], p[1])).collect())?;
        let lobes = doc.lobes.map(LobeCounts::new).transpose()?;
        Ok((data, lobes))
    }
}

#[derive(Serialize, Deserialize)]
struct NodalDocument {
    r: usize,
    nodes: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lobes: Option<Vec<u32>>,
}

/// Lobe counts `p_0, p_1, ..., p_r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LobeCounts {
    pub p: Vec<u32>,
}

impl LobeCounts {
    pub fn new(p: Vec<u32>) -> Result<Self> {
        if p.is_empty() || p.contains(&0) {
            return Err(Error::Argument("lobe counts must be a nonempty list of positive integers".into()));
        }
        Ok(Self { p })
    }

    pub fn p0(&self) -> u32 {
        self.p[0]
    }
}

/// `prod_j diag(a_j zeta^2 - 1, zeta^2 - a_j)` (conjugated node in the first slot).
pub fn backlund_product_loop(data: &NodalSpectralData, zeta: C) -> CMat {
    let z2 = zeta * zeta;
    let (d1, d2) = data
        .nodes
        .iter()
        .fold((ONE, ONE), |(x, y), a| (x * (a.conj() * z2 - ONE), y * (z2 - a)));
    CMat::from_row_slice(2, 2, &[d1, ZERO, ZERO, d2])
}

/// Real nodes `a_j = (p_j/p_0 - sqrt(p_j^2/p_0^2 - 1))^2` for given lobe counts.
pub fn bubbleton_branch_points(lobes: &LobeCounts) -> Result<NodalSpectralData> {
    let p0 = lobes.p0() as f64;
    let mut nodes = Vec::with_capacity(lobes.p.len() - 1);
    for &pj in &lobes.p[1..] {
        if pj <= lobes.p0() {
            return Err(Error::NoSolution(format!("p_j = {pj} must exceed p_0 = {}", lobes.p0())));
        }
        let t = pj as f64 / p0;
        let alpha = t - (t * t - 1.0).sqrt();
        nodes.push(C::from(alpha * alpha));
    }
    NodalSpectralData::new(nodes)
}

/// Checks `2y = -pi p_0` and `y (alpha_j + 1/alpha_j) = -pi p_j` with `alpha_j^2 = a_j`.
/// Returns the worst residual and the period `tau = i y`.
pub fn periodicity_check(data: &NodalSpectralData, lobes: &LobeCounts) -> (f64, C) {
    let y = -std::f64::consts::PI * lobes.p0() as f64 / 2.0;
    let mut residual: f64 = 0.0;
    for (j, a) in data.nodes.iter().enumerate() {
        let alpha = a.sqrt();
        let pj = lobes.p.get(j + 1).copied().unwrap_or(0) as f64;
        residual = residual.max((y * (alpha + ONE / alpha) + std::f64::consts::PI * pj).norm());
    }
    if lobes.p.len() != data.r() + 1 {
        residual = f64::INFINITY;
    }
    (residual, C::new(0.0, y))
}

/// Lobe counts implied by real nodes for a given `p_0`: `p_j = p_0 (alpha_j + 1/alpha_j) / 2`.
pub fn lobes_from_nodes(data: &NodalSpectralData, p0: u32) -> Vec<f64> {
    let mut out = vec![p0 as f64];
    for a in &data.nodes {
        let alpha = a.sqrt();
        out.push(p0 as f64 * (alpha + ONE / alpha).re / 2.0);
    }
    out
}

/// `max_j |r_j^2 - (2 p_j / p_0) cos(theta_j) r_j + 1|`.
pub fn complex_node_periodicity(data: &NodalSpectralData, lobes: &LobeCounts) -> f64 {
    complex_node_residual(&data.polar(), lobes)
}

/// [`complex_node_periodicity`] on raw `(r_j, theta_j)` pairs, which need not lie in the disk.
pub fn complex_node_residual(polar: &[(f64, f64)], lobes: &LobeCounts) -> f64 {
    let p0 = lobes.p0() as f64;
    polar
        .iter()
        .enumerate()
        .map(|(j, &(r, theta))| {
            let pj = lobes.p.get(j + 1).copied().unwrap_or(0) as f64;
            (r * r - 2.0 * pj / p0 * theta.cos() * r + 1.0).abs()
        })
        .fold(0.0, f64::max)
}
