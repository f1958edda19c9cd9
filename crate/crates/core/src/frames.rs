//! Extended frames on a rectangular grid of the domain, built by Symes' formula or by dressing the
//! vacuum, and the finite-difference checks run on them.
//!
//! Frames are stored at `n_zeta` points `zeta_k = exp(2 pi i k / n_zeta)` of the unit circle
//! (`zeta_0 = 1`) together with their derivative in `theta = arg zeta`, which the Sym-Bobenko
//! formula needs.
//!
//! Both constructions run on the untwisted loop: conjugating by `D = diag(1, zeta)` turns a
//! twisted loop in `zeta` into a loop in `lambda = zeta^2` with half the Fourier window, and
//! `F(zeta) = D^{-1} F~(zeta^2) D`.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iwasawa::{self, FlatSamples};
use crate::linalg::{self, m2_mul, CMat, M2, C, I, ONE, ZERO};
use crate::loops::{circle_point, CircleLoopSamples, LaurentMatrixLoop};
use crate::spectral::{self, HyperellipticSpectralData, NodalSpectralData};

/// Rectangle `[Re z_min, Re z_max] x [Im z_min, Im z_max]` sampled at `nx * ny` points.
/// Points are numbered row-major: `index = iy * nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    pub z_min: C,
    pub z_max: C,
    pub nx: usize,
    pub ny: usize,
}

impl DomainGrid {
    pub fn new(z_min: C, z_max: C, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Argument(format!("grid needs at least 2 x 2 points, got {nx} x {ny}")));
        }
        if !(z_max.re > z_min.re && z_max.im > z_min.im) {
            return Err(Error::Argument(format!("grid corners {z_min} and {z_max} do not span a rectangle")));
        }
        Ok(Self { z_min, z_max, nx, ny })
    }

    /// Square grid `[-half, half]^2` with `n` points per side.
    pub fn centered(half: f64, n: usize) -> Result<Self> {
        Self::new(C::new(-half, -half), C::new(half, half), n, n)
    }

    /// Parses `xmin,xmax,ymin,ymax,nx,ny`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!("grid '{text}' must be xmin,xmax,ymin,ymax,nx,ny")));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("grid value '{s}': {e}")));
        let n = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("grid count '{s}': {e}")));
        Self::new(
            C::new(f(parts[0])?, f(parts[2])?),
            C::new(f(parts[1])?, f(parts[3])?),
            n(parts[4])?,
            n(parts[5])?,
        )
    }

    pub fn hx(&self) -> f64 {
        (self.z_max.re - self.z_min.re) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.z_max.im - self.z_min.im) / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn point_at(&self, ix: usize, iy: usize) -> C {
        C::new(self.z_min.re + ix as f64 * self.hx(), self.z_min.im + iy as f64 * self.hy())
    }

    pub fn point(&self, index: usize) -> C {
        let (ix, iy) = self.coords(index);
        self.point_at(ix, iy)
    }

    /// Same rectangle with every spacing halved.
    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx - 1, ny: 2 * self.ny - 1, ..*self }
    }

    fn require_interior(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Argument("finite differences need at least 3 x 3 grid points".into()));
        }
        Ok(())
    }
}

/// Worst factorization figures over all grid points of a field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldDiagnostics {
    /// Largest reconstruction residual of the loop factorization.
    pub factorization: f64,
    /// Largest unitarity defect of the unitary factor on the factorization circle.
    pub unitarity: f64,
    /// Largest negative-degree mass of the plus factor (unit-circle factorization only).
    pub minus_mass: f64,
    /// Largest Fourier mass of the Gram loop outside the window (unit-circle factorization only).
    pub truncation: f64,
}

impl FieldDiagnostics {
    fn merge(self, other: Self) -> Self {
        Self {
            factorization: self.factorization.max(other.factorization),
            unitarity: self.unitarity.max(other.unitarity),
            minus_mass: self.minus_mass.max(other.minus_mass),
            truncation: self.truncation.max(other.truncation),
        }
    }
}

/// Frames `F(z, zeta_k)` on a [`DomainGrid`], optionally with `dF/dtheta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedFrameField {
    grid: DomainGrid,
    n_zeta: usize,
    frames: Vec<M2>,
    dtheta: Option<Vec<M2>>,
    base_normalized: bool,
    diagnostics: FieldDiagnostics,
}

impl ExtendedFrameField {
    pub fn from_parts(
        grid: DomainGrid,
        n_zeta: usize,
        frames: Vec<M2>,
        dtheta: Option<Vec<M2>>,
        base_normalized: bool,
    ) -> Result<Self> {
        check_n_zeta(n_zeta)?;
        let expected = grid.len() * n_zeta;
        if frames.len() != expected || dtheta.as_ref().map_or(false, |d| d.len() != expected) {
            return Err(Error::Argument(format!("expected {expected} frames for the grid")));
        }
        Ok(Self { grid, n_zeta, frames, dtheta, base_normalized, diagnostics: FieldDiagnostics::default() })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn n_zeta(&self) -> usize {
        self.n_zeta
    }

    pub fn zeta(&self, k: usize) -> C {
        circle_point(1.0, k, self.n_zeta)
    }

    pub fn base_normalized(&self) -> bool {
        self.base_normalized
    }

    pub fn diagnostics(&self) -> &FieldDiagnostics {
        &self.diagnostics
    }

    pub fn frame(&self, point: usize, k: usize) -> M2 {
        self.frames[point * self.n_zeta + k]
    }

    pub fn frame_matrix(&self, point: usize, k: usize) -> CMat {
        linalg::m2_to_matrix(&self.frame(point, k))
    }

    pub fn frame_mut(&mut self, point: usize, k: usize) -> &mut M2 {
        &mut self.frames[point * self.n_zeta + k]
    }

    pub fn dtheta(&self, point: usize, k: usize) -> Option<M2> {
        self.dtheta.as_ref().map(|d| d[point * self.n_zeta + k])
    }

    pub fn has_dtheta(&self) -> bool {
        self.dtheta.is_some()
    }

    /// Drops the theta-derivatives; consumers then fall back to differences along the circle.
    pub fn strip_dtheta(&mut self) {
        self.dtheta = None;
    }

    /// Index of a stored circle sample equal to `zeta` (within 1e-12).
    pub fn zeta_index(&self, zeta: C) -> Result<usize> {
        if (zeta.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("zeta = {zeta} is not on the unit circle")));
        }
        let turns = zeta.arg() / (2.0 * std::f64::consts::PI) * self.n_zeta as f64;
        let k = turns.round().rem_euclid(self.n_zeta as f64) as usize;
        if (self.zeta(k) - zeta).norm() > 1e-12 {
            return Err(Error::Argument(format!("zeta = {zeta} is not among the {} circle samples", self.n_zeta)));
        }
        Ok(k)
    }

    pub fn unitarity_defect(&self) -> f64 {
        self.frames.par_iter().map(linalg::m2_unitarity_defect).reduce(|| 0.0, f64::max)
    }

    pub fn determinant_defect(&self) -> f64 {
        self.frames.par_iter().map(|f| (linalg::m2_det(f) - ONE).norm()).reduce(|| 0.0, f64::max)
    }

    /// `max |F(-zeta) - tau F(zeta) tau|` over the field.
    pub fn twist_residual(&self) -> f64 {
        let n = self.n_zeta;
        (0..self.grid.len())
            .into_par_iter()
            .map(|p| {
                let mut worst = 0.0f64;
                for k in 0..n {
                    let f = self.frame(p, k);
                    let g = self.frame(p, (k + n / 2) % n);
                    let conj = [f[0], -f[1], -f[2], f[3]];
                    worst = worst.max(linalg::m2_norm(&linalg::m2_sub(&g, &conj)));
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Largest entrywise distance to another field on the same grid and circle.
    pub fn max_distance(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid || self.n_zeta != other.n_zeta {
            return Err(Error::Argument("fields live on different grids".into()));
        }
        Ok(self
            .frames
            .par_iter()
            .zip(&other.frames)
            .map(|(a, b)| linalg::m2_norm(&linalg::m2_sub(a, b)))
            .reduce(|| 0.0, f64::max))
    }

    /// Writes grid metadata to `json_path` and the frame entries to a CSV file next to it.
    pub fn write(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        let csv_path = json_path.with_extension("csv");
        let meta = FrameFileMeta {
            grid: self.grid,
            n_zeta: self.n_zeta,
            base_normalized: self.base_normalized,
            has_dtheta: self.has_dtheta(),
            diagnostics: self.diagnostics,
            csv: csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&csv_path, e);
        let mut header = String::from("point,k,re00,im00,re01,im01,re10,im10,re11,im11");
        if self.has_dtheta() {
            header.push_str(",dre00,dim00,dre01,dim01,dre10,dim10,dre11,dim11");
        }
        writeln!(w, "{header}").map_err(io)?;
        for p in 0..self.grid.len() {
            for k in 0..self.n_zeta {
                write!(w, "{p},{k}").map_err(io)?;
                let f = self.frame(p, k);
                for z in f.iter() {
                    write!(w, ",{},{}", z.re, z.im).map_err(io)?;
                }
                if let Some(d) = self.dtheta(p, k) {
                    for z in d.iter() {
                        write!(w, ",{},{}", z.re, z.im).map_err(io)?;
                    }
                }
                writeln!(w).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a field written by [`write`](Self::write).
    pub fn read(json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let meta: FrameFileMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let grid = DomainGrid::new(meta.grid.z_min, meta.grid.z_max, meta.grid.nx, meta.grid.ny)?;
        check_n_zeta(meta.n_zeta)?;
        let csv_path: PathBuf = json_path.parent().unwrap_or(Path::new(".")).join(&meta.csv);
        let file = std::fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let total = grid.len() * meta.n_zeta;
        let mut frames = vec![linalg::M2_IDENTITY; total];
        let mut dtheta = meta.has_dtheta.then(|| vec![[ZERO; 4]; total]);
        let mut seen = vec![false; total];
        let width = if meta.has_dtheta { 18 } else { 10 };
        for (line_no, line) in std::io::BufReader::new(file).lines().enumerate().skip(1) {
            let line = line.map_err(|e| Error::io(&csv_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse(format!("{}:{}: {msg}", csv_path.display(), line_no + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(bad(format!("expected {width} columns, found {}", fields.len())));
            }
            let p: usize = fields[0].trim().parse().map_err(|e| bad(format!("{e}")))?;
            let k: usize = fields[1].trim().parse().map_err(|e| bad(format!("{e}")))?;
            if p >= grid.len() || k >= meta.n_zeta {
                return Err(bad(format!("sample ({p}, {k}) outside the grid")));
            }
            let mut vals = Vec::with_capacity(width - 2);
            for f in &fields[2..] {
                vals.push(f.trim().parse::<f64>().map_err(|e| bad(format!("'{f}': {e}")))?);
            }
            let at = p * meta.n_zeta + k;
            frames[at] = std::array::from_fn(|i| C::new(vals[2 * i], vals[2 * i + 1]));
            if let Some(d) = dtheta.as_mut() {
                d[at] = std::array::from_fn(|i| C::new(vals[8 + 2 * i], vals[9 + 2 * i]));
            }
            seen[at] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!(
                "{}: missing sample ({}, {})",
                csv_path.display(),
                missing / meta.n_zeta,
                missing % meta.n_zeta
            )));
        }
        let mut field = Self::from_parts(grid, meta.n_zeta, frames, dtheta, meta.base_normalized)?;
        field.diagnostics = meta.diagnostics;
        Ok(field)
    }
}

#[derive(Serialize, Deserialize)]
struct FrameFileMeta {
    grid: DomainGrid,
    n_zeta: usize,
    base_normalized: bool,
    has_dtheta: bool,
    diagnostics: FieldDiagnostics,
    csv: String,
}

fn check_n_zeta(n_zeta: usize) -> Result<()> {
    if n_zeta < 4 || !n_zeta.is_power_of_two() {
        return Err(Error::Argument(format!("n_zeta = {n_zeta} must be a power of two, at least 4")));
    }
    Ok(())
}

/// Frames and theta-derivatives at the `n_zeta` circle samples of one grid point.
struct PointFrames {
    frames: Vec<M2>,
    dtheta: Vec<M2>,
    diagnostics: FieldDiagnostics,
}

fn build_field<F>(grid: &DomainGrid, n_zeta: usize, normalize: bool, compute: F) -> Result<ExtendedFrameField>
where
    F: Fn(C) -> Result<PointFrames> + Sync,
{
    let points: Vec<PointFrames> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let z = grid.point(i);
            compute(z).map_err(|e| e.at_grid_point(i, z))
        })
        .collect::<Result<_>>()?;
    let base = if normalize { Some(compute(ZERO)?) } else { None };
    let inverse_base: Option<Vec<(M2, M2)>> = base.map(|b| {
        b.frames
            .iter()
            .zip(&b.dtheta)
            .map(|(f, d)| {
                let inv = linalg::m2_inverse(f);
                // d(F0^{-1}) = -F0^{-1} dF0 F0^{-1}
                let dinv = linalg::m2_scale(&m2_mul(&m2_mul(&inv, d), &inv), -ONE);
                (inv, dinv)
            })
            .collect()
    });
    let mut frames = Vec::with_capacity(grid.len() * n_zeta);
    let mut dtheta = Vec::with_capacity(grid.len() * n_zeta);
    let mut diagnostics = FieldDiagnostics::default();
    for p in points {
        diagnostics = diagnostics.merge(p.diagnostics);
        for k in 0..n_zeta {
            match &inverse_base {
                Some(inv) => {
                    // F F0^{-1}: a right factor leaves Gauss map and immersion unchanged
                    let (n, dn) = &inv[k];
                    frames.push(m2_mul(&p.frames[k], n));
                    dtheta.push(linalg::m2_add(&m2_mul(&p.dtheta[k], n), &m2_mul(&p.frames[k], dn)));
                }
                None => {
                    frames.push(p.frames[k]);
                    dtheta.push(p.dtheta[k]);
                }
            }
        }
    }
    Ok(ExtendedFrameField {
        grid: *grid,
        n_zeta,
        frames,
        dtheta: Some(dtheta),
        base_normalized: normalize,
        diagnostics,
    })
}

/// `D^{-1} M D` with `D = diag(1, zeta)`.
#[inline]
fn retwist(m: &M2, zeta: C) -> M2 {
    [m[0], m[1] * zeta, m[2] / zeta, m[3]]
}

/// Frame and theta-derivative at `zeta` from the untwisted frame and its derivative in
/// `phi = arg lambda`: `dF/dtheta = 2 D^{-1} (dF~/dphi) D + F K - K F`, `K = diag(0, i)`.
#[inline]
fn retwist_with_derivative(f: &M2, df: &M2, zeta: C) -> (M2, M2) {
    let frame = retwist(f, zeta);
    let mut d = linalg::m2_scale(&retwist(df, zeta), C::from(2.0));
    d[1] += I * frame[1];
    d[2] -= I * frame[2];
    (frame, d)
}

/// Closed-form vacuum frame `exp((zeta^{-1} z - zeta conj(z)) A)`.
pub fn vacuum_frame(z: C, zeta: C) -> CMat {
    linalg::m2_to_matrix(&vacuum_frame_m2(z, zeta).0)
}

/// Vacuum frame and its theta-derivative at `zeta`.
fn vacuum_frame_m2(z: C, zeta: C) -> (M2, M2) {
    let s = z / zeta - zeta * z.conj();
    let ds = -I * z / zeta - I * zeta * z.conj();
    let (ch, sh) = (s.cosh(), s.sinh());
    ([ch, sh, sh, ch], [sh * ds, ch * ds, ch * ds, sh * ds])
}

/// The vacuum frame sampled on a grid, with exact theta-derivatives.
pub fn vacuum_field(grid: &DomainGrid, n_zeta: usize) -> Result<ExtendedFrameField> {
    check_n_zeta(n_zeta)?;
    build_field(grid, n_zeta, false, |z| {
        let (frames, dtheta) = (0..n_zeta).map(|k| vacuum_frame_m2(z, circle_point(1.0, k, n_zeta))).unzip();
        Ok(PointFrames { frames, dtheta, diagnostics: FieldDiagnostics::default() })
    })
    .map(|mut f| {
        f.base_normalized = true;
        f
    })
}

/// Per-sample values of the untwisted Symes exponent on the lambda circle.
struct SymesContext {
    window: usize,
    n_lambda: usize,
    n_zeta: usize,
    /// `(P(lambda)/lambda, Q(lambda))` and their derivatives in `arg lambda`
    off: Vec<(C, C, C, C)>,
}

impl SymesContext {
    fn new(data: &HyperellipticSpectralData, n_zeta: usize, window: usize) -> Result<Self> {
        check_n_zeta(n_zeta)?;
        if window == 0 {
            return Err(Error::Argument("factorization window must be positive".into()));
        }
        let lw = window.div_ceil(2);
        let n_lambda = (2 * lw + 1).next_power_of_two().max(n_zeta / 2);
        let scale = spectral::symes_scale(data);
        let p: Vec<C> = data.p_polynomial().iter().map(|x| x * scale).collect();
        let q: Vec<C> = data.q_polynomial().iter().map(|x| x * scale).collect();
        let off = (0..n_lambda)
            .map(|m| {
                let lambda = circle_point(1.0, m, n_lambda);
                let (pv, dpv) = linalg::poly_eval_with_derivative(&p, lambda);
                let (qv, dqv) = linalg::poly_eval_with_derivative(&q, lambda);
                // d/dphi = i lambda d/dlambda
                (pv / lambda, I * (dpv - pv / lambda), qv, I * lambda * dqv)
            })
            .collect();
        Ok(Self { window: lw, n_lambda, n_zeta, off })
    }

    fn frame_at(&self, z: C) -> Result<PointFrames> {
        let n = self.n_lambda;
        let mut phi = FlatSamples::zeros(2, n);
        for (m, &(p, _, q, _)) in self.off.iter().enumerate() {
            phi.sample_mut(m).copy_from_slice(&linalg::exp2_traceless(ZERO, z * p, z * q));
        }
        let out = iwasawa::unit_circle_kernel(&phi, self.window)?;

        let mut dbins = vec![ZERO; 4 * n];
        for j in 0..=self.window {
            for e in 0..4 {
                dbins[4 * j + e] = out.plus_coeffs[4 * j + e] * C::new(0.0, j as f64);
            }
        }
        let dplus = FlatSamples::from_bins(2, n, &dbins);

        let step = 2 * n / self.n_zeta;
        let mut frames = Vec::with_capacity(self.n_zeta);
        let mut dtheta = Vec::with_capacity(self.n_zeta);
        for k in 0..self.n_zeta {
            let m = (k * step) % n;
            let (p, dp, q, dq) = self.off[m];
            let (_, dphi) = linalg::exp2_traceless_derivative(ZERO, z * p, z * q, ZERO, z * dp, z * dq);
            let f: M2 = out.unitary.sample(m).try_into().expect("2x2 sample");
            let b: M2 = out.plus.sample(m).try_into().expect("2x2 sample");
            let db: M2 = dplus.sample(m).try_into().expect("2x2 sample");
            // F~ = Phi B^{-1}  =>  dF~ = (dPhi - F~ dB) B^{-1}
            let df = m2_mul(&linalg::m2_sub(&dphi, &m2_mul(&f, &db)), &linalg::m2_inverse(&b));
            let (fr, d) = retwist_with_derivative(&f, &df, circle_point(1.0, k, self.n_zeta));
            frames.push(fr);
            dtheta.push(d);
        }
        let d = out.diagnostics;
        Ok(PointFrames {
            frames,
            dtheta,
            diagnostics: FieldDiagnostics {
                factorization: d.reconstruction,
                unitarity: d.unitarity,
                minus_mass: d.minus_mass,
                truncation: d.gram_truncation,
            },
        })
    }
}

/// Extended frame by Symes' formula: the unitary factor of `exp(z X)` with `X` from
/// [`spectral::symes_exponent`], normalized so that `F(0) = I`. `window` counts Fourier blocks in `zeta`.
pub fn symes_frame(
    data: &HyperellipticSpectralData,
    grid: &DomainGrid,
    n_zeta: usize,
    window: usize,
) -> Result<ExtendedFrameField> {
    let ctx = SymesContext::new(data, n_zeta, window)?;
    build_field(grid, n_zeta, true, |z| ctx.frame_at(z))
}

/// Symes frame at a single `z` through the general unit-circle factorization in `zeta`, without
/// the untwisting shortcut. Returns the frames at the `n_zeta` circle samples.
pub fn symes_frame_direct(data: &HyperellipticSpectralData, z: C, n_zeta: usize, window: usize) -> Result<Vec<CMat>> {
    check_n_zeta(n_zeta)?;
    let n = (2 * window + 1).next_power_of_two().max(n_zeta);
    let samples = spectral::symes_exponent(data).scale(z).sample_on_circle(1.0, n)?.exp_pointwise();
    let factors = iwasawa::iwasawa_unit_circle(&samples, window)?;
    let step = n / n_zeta;
    Ok(factors.unitary_part.values().iter().step_by(step).cloned().collect())
}

/// Extra dressing factor `exp(sum_j (t_j zeta^j - conj(t_j) zeta^{-j}) A)` of the higher flows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowFactor {
    times: Vec<(u32, C)>,
}

impl FlowFactor {
    pub fn times(&self) -> &[(u32, C)] {
        &self.times
    }

    /// Scalar `s(zeta)` with factor `exp(s A)`.
    pub fn exponent(&self, zeta: C) -> C {
        self.times
            .iter()
            .map(|&(j, t)| t * zeta.powi(j as i32) - t.conj() * zeta.powi(-(j as i32)))
            .sum()
    }

    pub fn eval(&self, zeta: C) -> CMat {
        let s = self.exponent(zeta);
        let (ch, sh) = (s.cosh(), s.sinh());
        CMat::from_row_slice(2, 2, &[ch, sh, sh, ch])
    }
}

/// Higher-flow factor for times `t_j` given as `(j, t_j)` with `j` odd and `j <= 2g - 1`.
pub fn higher_flow_dressing(data: &HyperellipticSpectralData, times: &[(u32, C)]) -> Result<FlowFactor> {
    let g = data.genus() as u32;
    for &(j, _) in times {
        if j % 2 == 0 || j == 0 || j + 1 > 2 * g {
            return Err(Error::Argument(format!("flow index {j} must be odd and at most {}", (2 * g).saturating_sub(1))));
        }
    }
    Ok(FlowFactor { times: times.to_vec() })
}

/// Default dressing radius: half of `min |a_j|^{1/2}`.
pub fn default_epsilon(data: &HyperellipticSpectralData) -> f64 {
    0.5 * data.dressing_radius()
}

struct DressContext {
    window: usize,
    n_lambda: usize,
    n_zeta: usize,
    eps: f64,
    /// `(zeta, g_11, g_22)` at the inner and outer lambda-circle samples
    inner: Vec<(C, C, C)>,
    outer: Vec<(C, C, C)>,
    flow: FlowFactor,
}

impl DressContext {
    fn new(data: &HyperellipticSpectralData, eps: f64, n_zeta: usize, window: usize, flow: FlowFactor) -> Result<Self> {
        check_n_zeta(n_zeta)?;
        if !(eps > 0.0 && eps < data.dressing_radius()) {
            return Err(Error::Argument(format!(
                "epsilon = {eps} must lie in (0, {})",
                data.dressing_radius()
            )));
        }
        if window == 0 {
            return Err(Error::Argument("factorization window must be positive".into()));
        }
        let lw = window.div_ceil(2);
        let n_lambda = (3 * lw + 1).next_power_of_two();
        let sample = |radius: f64| -> Result<Vec<(C, C, C)>> {
            (0..n_lambda)
                .map(|m| {
                    // zeta with zeta^2 = radius^2 e^{2 pi i m / n_lambda}
                    let zeta = C::from_polar(radius, std::f64::consts::PI * m as f64 / n_lambda as f64);
                    let g = spectral::dressing_matrix(data, zeta)?;
                    Ok((zeta, g[(0, 0)], g[(1, 1)]))
                })
                .collect()
        };
        Ok(Self {
            window: lw,
            n_lambda,
            n_zeta,
            eps,
            inner: sample(eps)?,
            outer: sample(1.0 / eps)?,
            flow,
        })
    }

    fn untwisted_input(&self, z: C, at: &[(C, C, C)], radius: f64) -> Result<CircleLoopSamples> {
        let values = at
            .iter()
            .map(|&(zeta, g1, g2)| {
                let s = z / zeta - zeta * z.conj() + self.flow.exponent(zeta);
                let (ch, sh) = (s.cosh(), s.sinh());
                CMat::from_row_slice(2, 2, &[g1 * ch, g1 * sh / zeta, g2 * sh * zeta, g2 * ch])
            })
            .collect();
        CircleLoopSamples::new(2, radius, values)
    }

    fn frame_at(&self, z: C) -> Result<PointFrames> {
        let e2 = self.eps * self.eps;
        let inner = self.untwisted_input(z, &self.inner, e2)?;
        let outer = self.untwisted_input(z, &self.outer, 1.0 / e2)?;
        let tc = iwasawa::birkhoff_two_circle(&inner, &outer, self.window)?;
        let lp = &tc.annulus_loop;
        let dlp = LaurentMatrixLoop::new(
            2,
            lp.d_min(),
            lp.coeffs()
                .iter()
                .enumerate()
                .map(|(i, m)| m * C::new(0.0, (lp.d_min() + i as i64) as f64))
                .collect(),
        )?;
        let mut frames = Vec::with_capacity(self.n_zeta);
        let mut dtheta = Vec::with_capacity(self.n_zeta);
        let mut unitarity = 0.0f64;
        for k in 0..self.n_zeta {
            let zeta = circle_point(1.0, k, self.n_zeta);
            let lambda = zeta * zeta;
            let f = linalg::m2_from_matrix(&lp.eval(lambda)?);
            let df = linalg::m2_from_matrix(&dlp.eval(lambda)?);
            unitarity = unitarity.max(linalg::m2_unitarity_defect(&f));
            let (fr, d) = retwist_with_derivative(&f, &df, zeta);
            frames.push(fr);
            dtheta.push(d);
        }
        let _ = self.n_lambda;
        Ok(PointFrames {
            frames,
            dtheta,
            diagnostics: FieldDiagnostics { factorization: tc.residual, unitarity, ..Default::default() },
        })
    }
}

/// Extended frame by dressing the vacuum with the matrix of [`spectral::dressing_matrix`]:
/// the annulus factor of `g F^{(0)}` in the two-circle factorization at radii `epsilon`,
/// `1/epsilon`, restricted to the unit circle and normalized so that `F(0) = I`.
pub fn dress_frame(
    data: &HyperellipticSpectralData,
    grid: &DomainGrid,
    epsilon: f64,
    n_zeta: usize,
    window: usize,
) -> Result<ExtendedFrameField> {
    dress_frame_with_flow(data, grid, epsilon, n_zeta, window, &FlowFactor::default())
}

/// [`dress_frame`] with an additional higher-flow factor in the dressing input.
pub fn dress_frame_with_flow(
    data: &HyperellipticSpectralData,
    grid: &DomainGrid,
    epsilon: f64,
    n_zeta: usize,
    window: usize,
    flow: &FlowFactor,
) -> Result<ExtendedFrameField> {
    let ctx = DressContext::new(data, epsilon, n_zeta, window, flow.clone())?;
    build_field(grid, n_zeta, true, |z| ctx.frame_at(z))
}

/// Untwisted vacuum frame `D F^{(0)} D^{-1}` at `zeta` and its derivative in `arg zeta^2`.
fn untwisted_vacuum(z: C, zeta: C) -> (M2, M2) {
    let s = z / zeta - zeta * z.conj();
    let ds = -I * z / zeta - I * zeta * z.conj();
    let (ch, sh) = (s.cosh(), s.sinh());
    let f = [ch, sh / zeta, zeta * sh, ch];
    let df = [
        0.5 * sh * ds,
        0.5 * (ch * ds - I * sh) / zeta,
        0.5 * zeta * (I * sh + ch * ds),
        0.5 * sh * ds,
    ];
    (f, df)
}

/// Unitary `K` of `M = K R` with `R` upper triangular with positive diagonal.
fn qr_unitary(m: &M2) -> M2 {
    let n1 = (m[0].norm_sqr() + m[2].norm_sqr()).sqrt();
    let (k0, k2) = (m[0] / n1, m[2] / n1);
    let proj = k0.conj() * m[1] + k2.conj() * m[3];
    let (u1, u3) = (m[1] - proj * k0, m[3] - proj * k2);
    let n2 = (u1.norm_sqr() + u3.norm_sqr()).sqrt();
    [k0, u1 / n2, k2, u3 / n2]
}

/// `w w^dagger / |w|^2`
fn line_projection(w: [C; 2]) -> M2 {
    let n = w[0].norm_sqr() + w[1].norm_sqr();
    [
        w[0] * w[0].conj() / n,
        w[0] * w[1].conj() / n,
        w[1] * w[0].conj() / n,
        w[1] * w[1].conj() / n,
    ]
}

/// Dressing of the vacuum by `prod_j diag(1, phi_j(lambda))`, `phi_j = (a_j - lambda)/(1 - conj(a_j) lambda)`,
/// which equals [`spectral::dressing_matrix`] of the doubled nodes up to scalars. Each factor is a
/// simple element `pi + phi (I - pi)` with `pi` the projection onto the first axis, so
/// `F_j = g_j F_{j-1} g~_j^{-1}` where `g~_j` projects onto `F_{j-1}(1/conj(a_j))^{-1} e_1`.
struct RationalDressing {
    nodes: Vec<C>,
    n_zeta: usize,
}

impl RationalDressing {
    fn phi(a: C, lambda: C) -> (C, C) {
        let den = ONE - a.conj() * lambda;
        ((a - lambda) / den, (a.norm_sqr() - 1.0) / (den * den))
    }

    /// Untwisted frame and `lambda`-derivative at `zeta`, given the projections of the first
    /// `projections.len()` factors.
    fn eval(&self, z: C, zeta: C, projections: &[M2]) -> (M2, M2) {
        let lambda = zeta * zeta;
        let (mut f, dphi) = untwisted_vacuum(z, zeta);
        // d/dphi = i lambda d/dlambda
        let mut df = linalg::m2_scale(&dphi, ONE / (I * lambda));
        for (a, pt) in self.nodes.iter().zip(projections) {
            let (ph, dph) = Self::phi(*a, lambda);
            let g = [ONE, ZERO, ZERO, ph];
            let dg = [ZERO, ZERO, ZERO, dph];
            let q = linalg::m2_sub(&linalg::M2_IDENTITY, pt);
            let ginv = linalg::m2_add(pt, &linalg::m2_scale(&q, ONE / ph));
            let dginv = linalg::m2_scale(&q, -dph / (ph * ph));
            let gf = m2_mul(&g, &f);
            df = linalg::m2_add(
                &linalg::m2_add(&m2_mul(&m2_mul(&dg, &f), &ginv), &m2_mul(&m2_mul(&g, &df), &ginv)),
                &m2_mul(&gf, &dginv),
            );
            f = m2_mul(&gf, &ginv);
        }
        (f, df)
    }

    fn frame_at(&self, z: C) -> PointFrames {
        let mut projections: Vec<M2> = Vec::with_capacity(self.nodes.len());
        for a in &self.nodes {
            let zeta = ONE / a.conj().sqrt();
            let (f, _) = self.eval(z, zeta, &projections);
            let inv = linalg::m2_inverse(&f);
            projections.push(line_projection([inv[0], inv[2]]));
        }
        // plus factor at lambda = 0 is g~_r(0) ... g~_1(0); its QR unitary K turns it upper
        // triangular with positive diagonal, the gauge of the loop factorization
        let mut plus0 = linalg::M2_IDENTITY;
        for (a, pt) in self.nodes.iter().zip(&projections) {
            let q = linalg::m2_sub(&linalg::M2_IDENTITY, pt);
            plus0 = m2_mul(&linalg::m2_add(pt, &linalg::m2_scale(&q, *a)), &plus0);
        }
        let k = qr_unitary(&plus0);
        let mut frames = Vec::with_capacity(self.n_zeta);
        let mut dtheta = Vec::with_capacity(self.n_zeta);
        let mut unitarity = 0.0f64;
        for j in 0..self.n_zeta {
            let zeta = circle_point(1.0, j, self.n_zeta);
            let (f, df) = self.eval(z, zeta, &projections);
            let (f, df) = (m2_mul(&f, &k), m2_mul(&df, &k));
            unitarity = unitarity.max(linalg::m2_unitarity_defect(&f));
            let (fr, d) = retwist_with_derivative(&f, &linalg::m2_scale(&df, I * zeta * zeta), zeta);
            frames.push(fr);
            dtheta.push(d);
        }
        PointFrames { frames, dtheta, diagnostics: FieldDiagnostics { unitarity, ..Default::default() } }
    }
}

/// Extended frame of nodal data by dressing the vacuum with the rational loop
/// `prod_j diag(conj(a_j) lambda - 1, lambda - a_j)`, `lambda = zeta^2`, in closed form.
/// Agrees with [`dress_frame`] on the doubled data and needs no factorization.
pub fn rational_dress_frame(data: &NodalSpectralData, grid: &DomainGrid, n_zeta: usize) -> Result<ExtendedFrameField> {
    check_n_zeta(n_zeta)?;
    let ctx = RationalDressing { nodes: data.nodes().to_vec(), n_zeta };
    build_field(grid, n_zeta, true, |z| Ok(ctx.frame_at(z)))
}

/// `F^{-1} dF/dx` and `F^{-1} dF/dy` by central differences at circle sample `k`.
/// Entries are `None` where the stencil leaves the grid.
fn difference_quotients(field: &ExtendedFrameField, k: usize) -> (Vec<Option<M2>>, Vec<Option<M2>>) {
    let g = field.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let mut ax = vec![None; g.len()];
    let mut ay = vec![None; g.len()];
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let p = g.index(ix, iy);
            let inv = linalg::m2_inverse(&field.frame(p, k));
            if ix > 0 && ix + 1 < g.nx {
                let d = linalg::m2_sub(&field.frame(g.index(ix + 1, iy), k), &field.frame(g.index(ix - 1, iy), k));
                ax[p] = Some(m2_mul(&inv, &linalg::m2_scale(&d, C::from(0.5 / hx))));
            }
            if iy > 0 && iy + 1 < g.ny {
                let d = linalg::m2_sub(&field.frame(g.index(ix, iy + 1), k), &field.frame(g.index(ix, iy - 1), k));
                ay[p] = Some(m2_mul(&inv, &linalg::m2_scale(&d, C::from(0.5 / hy))));
            }
        }
    }
    (ax, ay)
}

/// Connection form at one interior grid point, `alpha_z = zeta^{-1} a_{-1} + a_0` and
/// `alpha_zbar = a'_0 + zeta a'_1` ideally.
#[derive(Clone, Debug)]
pub struct ConnectionSample {
    pub index: usize,
    pub alpha_z: LaurentMatrixLoop,
    pub alpha_zbar: LaurentMatrixLoop,
}

#[derive(Clone, Debug)]
pub struct ConnectionForm {
    pub samples: Vec<ConnectionSample>,
    /// Largest Fourier mass outside degrees `{-1, 0, 1}`.
    pub window_violation: f64,
    /// Largest off-diagonal part of the degree-0 coefficients and diagonal part of the degree
    /// `+-1` coefficients.
    pub structure_defect: f64,
}

/// Finite-difference connection form `F^{-1} dF` split into `dz` and `dzbar` parts and expanded
/// in `zeta` over `[-1, 1]`.
pub fn connection_form(field: &ExtendedFrameField) -> Result<ConnectionForm> {
    let g = field.grid;
    g.require_interior()?;
    let n = field.n_zeta;
    let per_k: Vec<_> = (0..n).into_par_iter().map(|k| difference_quotients(field, k)).collect();
    let interior: Vec<usize> = (1..g.ny - 1).flat_map(|iy| (1..g.nx - 1).map(move |ix| g.index(ix, iy))).collect();
    let results: Vec<(ConnectionSample, f64, f64)> = interior
        .par_iter()
        .map(|&p| {
            let mut z_vals = Vec::with_capacity(n);
            let mut zb_vals = Vec::with_capacity(n);
            for (ax, ay) in &per_k {
                let (x, y) = (ax[p].expect("interior"), ay[p].expect("interior"));
                // d/dz = (d/dx - i d/dy)/2
                z_vals.push(linalg::m2_to_matrix(&linalg::m2_scale(&linalg::m2_sub(&x, &linalg::m2_scale(&y, I)), C::from(0.5))));
                zb_vals.push(linalg::m2_to_matrix(&linalg::m2_scale(&linalg::m2_add(&x, &linalg::m2_scale(&y, I)), C::from(0.5))));
            }
            let (az, rz) = CircleLoopSamples::new(2, 1.0, z_vals)?.fourier_coefficients(-1, 1)?;
            let (azb, rzb) = CircleLoopSamples::new(2, 1.0, zb_vals)?.fourier_coefficients(-1, 1)?;
            let mut structure = 0.0f64;
            for l in [&az, &azb] {
                let c0 = l.coeff(0);
                structure = structure.max(c0[(0, 1)].norm()).max(c0[(1, 0)].norm());
                for d in [-1, 1] {
                    let c = l.coeff(d);
                    structure = structure.max(c[(0, 0)].norm()).max(c[(1, 1)].norm());
                }
            }
            Ok((ConnectionSample { index: p, alpha_z: az, alpha_zbar: azb }, rz.max(rzb), structure))
        })
        .collect::<Result<_>>()?;
    let mut window_violation = 0.0f64;
    let mut structure_defect = 0.0f64;
    let mut samples = Vec::with_capacity(results.len());
    for (s, w, d) in results {
        window_violation = window_violation.max(w);
        structure_defect = structure_defect.max(d);
        samples.push(s);
    }
    Ok(ConnectionForm { samples, window_violation, structure_defect })
}

fn flatness_at(field: &ExtendedFrameField, k: usize) -> f64 {
    let g = field.grid;
    let (ax, ay) = difference_quotients(field, k);
    let (hx, hy) = (g.hx(), g.hy());
    let mut worst = 0.0f64;
    for iy in 1..g.ny - 1 {
        for ix in 1..g.nx - 1 {
            let p = g.index(ix, iy);
            let (x, y) = (ax[p].expect("interior"), ay[p].expect("interior"));
            let dy_ax = linalg::m2_scale(
                &linalg::m2_sub(&ax[g.index(ix, iy + 1)].expect("interior"), &ax[g.index(ix, iy - 1)].expect("interior")),
                C::from(0.5 / hy),
            );
            let dx_ay = linalg::m2_scale(
                &linalg::m2_sub(&ay[g.index(ix + 1, iy)].expect("interior"), &ay[g.index(ix - 1, iy)].expect("interior")),
                C::from(0.5 / hx),
            );
            // d/dx A_y - d/dy A_x + [A_x, A_y] = 0
            let defect = linalg::m2_add(&linalg::m2_sub(&dx_ay, &dy_ax), &linalg::m2_commutator(&x, &y));
            worst = worst.max(linalg::m2_norm(&defect));
        }
    }
    worst
}

/// Discrete Maurer-Cartan defect at the circle sample `zeta`, maximized over interior points.
pub fn flatness_residual(field: &ExtendedFrameField, zeta: C) -> Result<f64> {
    field.grid.require_interior()?;
    let k = field.zeta_index(zeta)?;
    Ok(flatness_at(field, k))
}

/// [`flatness_residual`] maximized over every stored circle sample.
pub fn flatness_residual_max(field: &ExtendedFrameField) -> Result<f64> {
    field.grid.require_interior()?;
    Ok((0..field.n_zeta).into_par_iter().map(|k| flatness_at(field, k)).reduce(|| 0.0, f64::max))
}

/// The two parts of [`killing_field_residual`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KillingResidual {
    /// Finite-difference defect of `d xi = [xi, alpha]`.
    pub derivative: f64,
    /// Fourier mass of `xi(z)` outside the degree window of `xi0`.
    pub window: f64,
}

impl KillingResidual {
    pub fn total(&self) -> f64 {
        self.derivative + self.window
    }
}

/// Checks that `xi(z) = F^{-1} xi0 F` solves `d xi = [xi, alpha]` and stays a Laurent polynomial
/// of the same degree as `xi0`.
pub fn killing_field_residual(field: &ExtendedFrameField, xi0: &LaurentMatrixLoop) -> Result<KillingResidual> {
    let g = field.grid;
    g.require_interior()?;
    let n = field.n_zeta;
    let deg = xi0.d_max().max(-xi0.d_min());
    if (2 * deg + 1) as usize > n {
        return Err(Error::Argument(format!("{n} circle samples cannot resolve degree {deg}")));
    }
    let xi0_vals: Vec<M2> = (0..n)
        .map(|k| xi0.eval(field.zeta(k)).map(|m| linalg::m2_from_matrix(&m)))
        .collect::<Result<_>>()?;
    let conj = |p: usize, k: usize| -> M2 {
        let f = field.frame(p, k);
        m2_mul(&m2_mul(&linalg::m2_inverse(&f), &xi0_vals[k]), &f)
    };
    let (hx, hy) = (g.hx(), g.hy());
    let derivative = (0..n)
        .into_par_iter()
        .map(|k| {
            let (ax, ay) = difference_quotients(field, k);
            let mut worst = 0.0f64;
            for iy in 1..g.ny - 1 {
                for ix in 1..g.nx - 1 {
                    let p = g.index(ix, iy);
                    let xi = conj(p, k);
                    let dx = linalg::m2_scale(
                        &linalg::m2_sub(&conj(g.index(ix + 1, iy), k), &conj(g.index(ix - 1, iy), k)),
                        C::from(0.5 / hx),
                    );
                    let dy = linalg::m2_scale(
                        &linalg::m2_sub(&conj(g.index(ix, iy + 1), k), &conj(g.index(ix, iy - 1), k)),
                        C::from(0.5 / hy),
                    );
                    let ex = linalg::m2_sub(&dx, &linalg::m2_commutator(&xi, &ax[p].expect("interior")));
                    let ey = linalg::m2_sub(&dy, &linalg::m2_commutator(&xi, &ay[p].expect("interior")));
                    worst = worst.max(linalg::m2_norm(&ex)).max(linalg::m2_norm(&ey));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let window = (0..g.len())
        .into_par_iter()
        .map(|p| -> Result<f64> {
            let vals = (0..n).map(|k| linalg::m2_to_matrix(&conj(p, k))).collect();
            let (_, mass) = CircleLoopSamples::new(2, 1.0, vals)?.fourier_coefficients(-deg, deg)?;
            Ok(mass)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(KillingResidual { derivative, window })
}

/// Unit vector of the line through a unit 2-vector `(u, v)`:
/// `(2 Re(u conj v), 2 Im(conj(u) v), |u|^2 - |v|^2)`.
pub fn hopf_point(u: C, v: C) -> [f64; 3] {
    let s = u.norm_sqr() + v.norm_sqr();
    [2.0 * (u * v.conj()).re / s, 2.0 * (u.conj() * v).im / s, (u.norm_sqr() - v.norm_sqr()) / s]
}

/// Harmonic map `F(zeta = 1) [1, 0]` as points of the unit sphere, one per grid point.
pub fn gauss_map(field: &ExtendedFrameField) -> Vec<[f64; 3]> {
    (0..field.grid.len())
        .map(|p| {
            let f = field.frame(p, 0);
            hopf_point(f[0], f[2])
        })
        .collect()
}
