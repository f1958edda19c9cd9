//! Constant mean curvature immersions from extended frames (Sym-Bobenko), mesh export and
//! metric checks.
//!
//! Traceless skew-Hermitian matrices are identified with R^3 by
//! `i (x1 s1 + x2 s2 + x3 s3) <-> (x1, x2, x3)` with the Pauli matrices `s_k`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{connection_form, DomainGrid, ExtendedFrameField};
use crate::linalg::{self, m2_mul, C, I, M2};

pub type Point3 = [f64; 3];

/// Vertices of an immersion sampled on a grid with quad faces `(ix, iy), (ix+1, iy), (ix+1, iy+1), (ix, iy+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImmersionMesh {
    pub grid: DomainGrid,
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 4]>,
    pub mean_curvature_target: f64,
}

impl ImmersionMesh {
    /// Mesh over `grid` with row-major `vertices`.
    pub fn new(grid: DomainGrid, vertices: Vec<Point3>, mean_curvature_target: f64) -> Result<Self> {
        if vertices.len() != grid.len() {
            return Err(Error::Argument(format!("{} vertices for a grid of {} points", vertices.len(), grid.len())));
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain(format!("vertex {i} is not finite")));
        }
        let mut faces = Vec::with_capacity((grid.nx - 1) * (grid.ny - 1));
        for iy in 0..grid.ny - 1 {
            for ix in 0..grid.nx - 1 {
                faces.push([grid.index(ix, iy), grid.index(ix + 1, iy), grid.index(ix + 1, iy + 1), grid.index(ix, iy + 1)]);
            }
        }
        Ok(Self { grid, vertices, faces, mean_curvature_target })
    }

    /// Unit normals `f_y x f_x` from central differences (one-sided on the boundary). For
    /// Sym-Bobenko meshes this orientation agrees with the Gauss map.
    pub fn vertex_normals(&self) -> Vec<Point3> {
        let g = self.grid;
        (0..g.len())
            .map(|p| {
                let (ix, iy) = g.coords(p);
                let dx = sub(&self.vertices[g.index((ix + 1).min(g.nx - 1), iy)], &self.vertices[g.index(ix.saturating_sub(1), iy)]);
                let dy = sub(&self.vertices[g.index(ix, (iy + 1).min(g.ny - 1))], &self.vertices[g.index(ix, iy.saturating_sub(1))]);
                normalize(&cross(&dy, &dx))
            })
            .collect()
    }
}

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &Point3) -> Point3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Coordinates of a traceless skew-Hermitian matrix `i (x1 s1 + x2 s2 + x3 s3)`.
pub fn pauli_coords(m: &M2) -> Point3 {
    [m[2].im, -m[2].re, m[0].im]
}

/// Sym-Bobenko immersion `f = -(1/2H) (i F s3 F^{-1} + 2 i zeta dF/dzeta F^{-1})` at `zeta0`,
/// translated so that `f(0) = 0` when the grid contains `z = 0` and so that the first vertex is
/// the origin otherwise. Uses the stored theta-derivative (`zeta d/dzeta = -i d/dtheta`) and falls
/// back to central differences along the circle.
pub fn sym_bobenko(field: &ExtendedFrameField, zeta0: C, h: f64) -> Result<ImmersionMesh> {
    if (zeta0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("zeta0 = {zeta0} is not on the unit circle")));
    }
    if !(h.is_finite() && h != 0.0) {
        return Err(Error::Argument(format!("mean curvature {h} must be finite and nonzero")));
    }
    let k = field.zeta_index(zeta0)?;
    let n = field.n_zeta();
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let grid = *field.grid();
    let raw: Vec<Point3> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let f = field.frame(p, k);
            let df = field.dtheta(p, k).unwrap_or_else(|| {
                let d = linalg::m2_sub(&field.frame(p, (k + 1) % n), &field.frame(p, (k + n - 1) % n));
                linalg::m2_scale(&d, C::from(0.5 / step))
            });
            let inv = linalg::m2_inverse(&f);
            let s3f = m2_mul(&m2_mul(&f, &[C::from(1.0), C::from(0.0), C::from(0.0), C::from(-1.0)]), &inv);
            let m = linalg::m2_add(&linalg::m2_scale(&s3f, I), &linalg::m2_scale(&m2_mul(&df, &inv), C::from(2.0)));
            let x = pauli_coords(&m);
            let s = -0.5 / h;
            [s * x[0], s * x[1], s * x[2]]
        })
        .collect();
    let origin = origin_index(&grid);
    let o = raw[origin];
    let vertices = raw.iter().map(|v| sub(v, &o)).collect();
    ImmersionMesh::new(grid, vertices, h)
}

/// Grid point closest to `z = 0`.
fn origin_index(grid: &DomainGrid) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| grid.point(a).norm().total_cmp(&grid.point(b).norm()))
        .expect("grid is not empty")
}

/// Per-vertex `|H|` from the cotangent Laplacian with mixed Voronoi areas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCurvatureEstimate {
    /// `None` on boundary vertices and where every adjacent triangle is degenerate.
    pub values: Vec<Option<f64>>,
    /// Triangles with area below `1e-14`, left out of the sums.
    pub degenerate_faces: usize,
}

impl MeanCurvatureEstimate {
    /// Values at vertices at least `margin` rings away from the grid boundary.
    pub fn interior(&self, grid: &DomainGrid, margin: usize) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .filter(|&(p, _)| {
                let (ix, iy) = grid.coords(p);
                ix >= margin && iy >= margin && ix + margin < grid.nx && iy + margin < grid.ny
            })
            .filter_map(|(_, v)| *v)
            .collect()
    }
}

/// `(max - min) / mean` of a list of values.
pub fn relative_spread(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean
}

pub fn discrete_mean_curvature(mesh: &ImmersionMesh) -> MeanCurvatureEstimate {
    let v = &mesh.vertices;
    let nv = v.len();
    let mut laplace = vec![[0.0f64; 3]; nv];
    let mut area = vec![0.0f64; nv];
    let mut degenerate = 0;
    for quad in &mesh.faces {
        for tri in [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]] {
            let (a, b, c) = (v[tri[0]], v[tri[1]], v[tri[2]]);
            let twice = norm(&cross(&sub(&b, &a), &sub(&c, &a)));
            if 0.5 * twice < 1e-14 {
                degenerate += 1;
                continue;
            }
            for corner in 0..3 {
                let (i, j, k) = (tri[corner], tri[(corner + 1) % 3], tri[(corner + 2) % 3]);
                // angle at i, opposite edge jk
                let (e1, e2) = (sub(&v[j], &v[i]), sub(&v[k], &v[i]));
                let w = 0.5 * dot(&e1, &e2) / twice;
                for (s, t) in [(j, k), (k, j)] {
                    let e = sub(&v[t], &v[s]);
                    for c in 0..3 {
                        laplace[s][c] += w * e[c];
                    }
                }
            }
            // mixed Voronoi area
            let pts = [a, b, c];
            let obtuse = (0..3).find(|&q| dot(&sub(&pts[(q + 1) % 3], &pts[q]), &sub(&pts[(q + 2) % 3], &pts[q])) < 0.0);
            let tri_area = 0.5 * twice;
            for q in 0..3 {
                let share = match obtuse {
                    Some(o) if o == q => tri_area / 2.0,
                    Some(_) => tri_area / 4.0,
                    None => {
                        let (p, r, s) = (pts[q], pts[(q + 1) % 3], pts[(q + 2) % 3]);
                        let cot_s = dot(&sub(&p, &s), &sub(&r, &s)) / twice;
                        let cot_r = dot(&sub(&p, &r), &sub(&s, &r)) / twice;
                        (dot(&sub(&r, &p), &sub(&r, &p)) * cot_s + dot(&sub(&s, &p), &sub(&s, &p)) * cot_r) / 8.0
                    }
                };
                area[tri[q]] += share;
            }
        }
    }
    let g = mesh.grid;
    let values = (0..nv)
        .map(|p| {
            let (ix, iy) = g.coords(p);
            let interior = ix > 0 && iy > 0 && ix + 1 < g.nx && iy + 1 < g.ny;
            (interior && area[p] > 0.0).then(|| norm(&laplace[p]) / (2.0 * area[p]))
        })
        .collect();
    MeanCurvatureEstimate { values, degenerate_faces: degenerate }
}

/// Result of checking `u_{z zbar} + |pq| sinh(4u) = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SinhGordonReport {
    /// Largest `|u_{z zbar} + |pq| sinh(4u)|` over points with a full five-point stencil.
    pub residual: f64,
    /// Range of the Hopf modulus `|pq|`; frames normalized like the vacuum give 1.
    pub hopf_min: f64,
    pub hopf_max: f64,
    /// Interior points left out because `p` or `q` vanishes there.
    pub excluded: usize,
}

/// With `alpha_z = zeta^{-1} [[0, p], [q, 0]] + ...`, the metric factor `u = log(|p|/|q|)/4` obeys
/// `u_{z zbar} + |pq| sinh(4u) = 0`, which is `u_{z zbar} + sinh(4u) = 0` when `|pq| = 1`.
/// `u_{z zbar} = (u_xx + u_yy)/4` by the five-point stencil. Needs at least a 5 x 5 grid.
pub fn sinh_gordon_residual(field: &ExtendedFrameField) -> Result<SinhGordonReport> {
    let g = *field.grid();
    if g.nx < 5 || g.ny < 5 {
        return Err(Error::Argument("the sinh-Gordon check needs at least 5 x 5 grid points".into()));
    }
    let cf = connection_form(field)?;
    let mut u = vec![None; g.len()];
    let mut hopf = vec![0.0; g.len()];
    let mut excluded = 0;
    for s in &cf.samples {
        let a = s.alpha_z.coeff(-1);
        let (p, q) = (a[(0, 1)].norm(), a[(1, 0)].norm());
        if p < 1e-12 || q < 1e-12 {
            excluded += 1;
            continue;
        }
        u[s.index] = Some(0.25 * (p / q).ln());
        hopf[s.index] = p * q;
    }
    let (hx, hy) = (g.hx(), g.hy());
    let mut report = SinhGordonReport { hopf_min: f64::INFINITY, hopf_max: 0.0, excluded, ..Default::default() };
    for iy in 2..g.ny - 2 {
        for ix in 2..g.nx - 2 {
            let at = |x: usize, y: usize| u[g.index(x, y)];
            let (Some(c), Some(l), Some(r), Some(d), Some(t)) = (at(ix, iy), at(ix - 1, iy), at(ix + 1, iy), at(ix, iy - 1), at(ix, iy + 1))
            else {
                continue;
            };
            let lap = (l - 2.0 * c + r) / (hx * hx) + (d - 2.0 * c + t) / (hy * hy);
            let k = hopf[g.index(ix, iy)];
            report.residual = report.residual.max((0.25 * lap + k * (4.0 * c).sinh()).abs());
            report.hopf_min = report.hopf_min.min(k);
            report.hopf_max = report.hopf_max.max(k);
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Format from a file extension, OBJ unless the extension is `ply`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => MeshFormat::Ply,
            _ => MeshFormat::Obj,
        }
    }
}

/// Writes an ASCII OBJ (`v x y z`, then 1-based `f i j k l`) or ASCII PLY with double vertices.
/// Numbers use the shortest representation that parses back to the same value.
pub fn export_mesh(mesh: &ImmersionMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        match format {
            MeshFormat::Obj => {
                for v in &mesh.vertices {
                    writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
                }
                for f in &mesh.faces {
                    writeln!(w, "f {} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1)?;
                }
            }
            MeshFormat::Ply => {
                writeln!(w, "ply\nformat ascii 1.0")?;
                writeln!(w, "element vertex {}", mesh.vertices.len())?;
                writeln!(w, "property double x\nproperty double y\nproperty double z")?;
                writeln!(w, "element face {}", mesh.faces.len())?;
                writeln!(w, "property list uchar int vertex_indices\nend_header")?;
                for v in &mesh.vertices {
                    writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
                }
                for f in &mesh.faces {
                    writeln!(w, "4 {} {} {} {}", f[0], f[1], f[2], f[3])?;
                }
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Vertices and 0-based faces of an OBJ file written by [`export_mesh`].
pub fn read_obj(path: impl AsRef<Path>) -> Result<(Vec<Point3>, Vec<Vec<usize>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let bad = |what: &str| Error::Parse(format!("{}:{}: {what}", path.display(), n + 1));
        match parts.next() {
            Some("v") => {
                let xs: Vec<f64> = parts.map(|s| s.parse::<f64>().map_err(|_| bad("bad vertex coordinate"))).collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| s.split('/').next().unwrap_or("").parse::<usize>().map_err(|_| bad("bad face index")))
                    .collect::<Result<_>>()?;
                if idx.iter().any(|&i| i == 0) {
                    return Err(bad("face indices are 1-based"));
                }
                faces.push(idx.iter().map(|i| i - 1).collect());
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Cylinder fitted to surface points with unit normals: the axis direction is the least-weight
/// eigenvector of `sum n n^T`, the axis position a least-squares circle in the orthogonal plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderFit {
    pub point: Point3,
    pub direction: Point3,
    pub radius: f64,
}

impl CylinderFit {
    pub fn distance(&self, x: &Point3) -> f64 {
        let d = sub(x, &self.point);
        let along = dot(&d, &self.direction);
        norm(&[d[0] - along * self.direction[0], d[1] - along * self.direction[1], d[2] - along * self.direction[2]])
    }
}

pub fn fit_cylinder(points: &[Point3], normals: &[Point3]) -> Result<CylinderFit> {
    if points.len() < 3 || points.len() != normals.len() {
        return Err(Error::Argument("cylinder fit needs at least three points with normals".into()));
    }
    let mut m = Matrix3::zeros();
    for n in normals {
        let v = Vector3::new(n[0], n[1], n[2]);
        m += v * v.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let imin = eig.eigenvalues.imin();
    let axis = eig.eigenvectors.column(imin).into_owned();
    let e1 = axis.cross(&if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() }).normalize();
    let e2 = axis.cross(&e1);
    // |w|^2 + D u + E v + F = 0
    let rows = points.len();
    let mut a = DMatrix::zeros(rows, 3);
    let mut b = DVector::zeros(rows);
    for (r, p) in points.iter().enumerate() {
        let v = Vector3::new(p[0], p[1], p[2]);
        let (u, w) = (v.dot(&e1), v.dot(&e2));
        a[(r, 0)] = u;
        a[(r, 1)] = w;
        a[(r, 2)] = 1.0;
        b[r] = -(u * u + w * w);
    }
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Domain(format!("cylinder fit: {e}")))?;
    let (cu, cw) = (-0.5 * sol[0], -0.5 * sol[1]);
    let radius = (cu * cu + cw * cw - sol[2]).max(0.0).sqrt();
    let c = e1 * cu + e2 * cw;
    Ok(CylinderFit { point: [c.x, c.y, c.z], direction: [axis.x, axis.y, axis.z], radius })
}

/// Root-mean-square distance between `b` and the best rigid motion of `a` (Kabsch).
pub fn rigid_fit_residual(a: &[Point3], b: &[Point3]) -> Result<f64> {
    Ok(rigid_fit(a, b)?.1)
}

/// Rotation `R` and the root-mean-square residual of `b ~ R a + t`.
pub fn rigid_fit(a: &[Point3], b: &[Point3]) -> Result<(Matrix3<f64>, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Argument("rigid fit needs two point lists of equal nonzero length".into()));
    }
    let centroid = |pts: &[Point3]| {
        let s = pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p[0], p[1], p[2]));
        s / pts.len() as f64
    };
    let (ca, cb) = (centroid(a), centroid(b));
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (Vector3::new(p[0], p[1], p[2]) - ca) * (Vector3::new(q[0], q[1], q[2]) - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (r * (Vector3::new(p[0], p[1], p[2]) - ca) + cb - Vector3::new(q[0], q[1], q[2])).norm_squared())
        .sum();
    Ok((r, (sum / a.len() as f64).sqrt()))
}
