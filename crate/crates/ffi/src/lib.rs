//! C ABI for `spectral-frames`.
//!
//! Every function returns an [`SfStatus`]. Objects cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. After a failure,
//! [`sf_last_error_message`] describes it (per thread).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spectral_frames::frames::{self, DomainGrid, ExtendedFrameField};
use spectral_frames::grassmann::{self, EquivariantMapData, FiberIndexing, P1SpectralData};
use spectral_frames::spectral::{self, HyperellipticSpectralData, LobeCounts};
use spectral_frames::surfaces::{self, ImmersionMesh, MeshFormat};
use spectral_frames::{Complex64, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Factorization = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Rectangle `[x_min, x_max] x [y_min, y_max]` sampled at `nx * ny` points, row-major in `y`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SfGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Extended frames on a grid.
pub struct SfFrameField(ExtendedFrameField);

/// Quad mesh from the Sym-Bobenko formula.
pub struct SfMesh(ImmersionMesh);

/// Equivariant map into a Grassmannian.
pub struct SfGrassmannMap {
    data: P1SpectralData,
    map: EquivariantMapData,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SfStatus {
    match err {
        Error::Io { .. } => SfStatus::Io,
        e if e.is_factorization() => SfStatus::Factorization,
        Error::AtGridPoint { .. } | Error::DegeneratePlane(_) | Error::NoSolution(_) => SfStatus::Numerical,
        _ => SfStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SfStatus>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

fn fail(err: Error) -> SfStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null_pointer(name: &str) -> SfStatus {
    set_error(&format!("{name} is null"));
    SfStatus::NullPointer
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], SfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null_pointer(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], SfStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null_pointer(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn deref<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, SfStatus> {
    ptr.as_ref().ok_or_else(|| null_pointer(name))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), SfStatus> {
    if out.is_null() {
        return Err(null_pointer(name));
    }
    out.write(value);
    Ok(())
}

fn complexes(pairs: &[f64]) -> Vec<Complex64> {
    pairs.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

fn grid_of(g: &SfGrid) -> Result<DomainGrid, SfStatus> {
    DomainGrid::new(Complex64::new(g.x_min, g.y_min), Complex64::new(g.x_max, g.y_max), g.nx, g.ny).map_err(fail)
}

fn check_capacity(needed: usize, cap: usize) -> Result<(), SfStatus> {
    if cap < needed {
        set_error(&format!("buffer holds {cap} values, {needed} needed"));
        return Err(SfStatus::BufferTooSmall);
    }
    Ok(())
}

/// Message for the last failure on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Real nodes of the bubbleton with lobe counts `p[0..len]`; writes `len - 1` values.
///
/// # Safety
/// `p` must point to `len` values and `out` to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_bubbleton_nodes(p: *const u32, len: usize, out: *mut f64, cap: usize) -> SfStatus {
    guard(|| {
        let lobes = LobeCounts::new(slice(p, len, "p")?.to_vec()).map_err(fail)?;
        let nodal = spectral::bubbleton_branch_points(&lobes).map_err(fail)?;
        check_capacity(nodal.nodes().len(), cap)?;
        let out = slice_mut(out, cap, "out")?;
        for (o, a) in out.iter_mut().zip(nodal.nodes()) {
            *o = a.re;
        }
        Ok(())
    })
}

/// Symes frames for branch points given as `2 * genus` doubles `(re, im, re, im, ...)`.
///
/// # Safety
/// `branch_points` must point to `2 * genus` doubles, `grid` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_symes(
    branch_points: *const f64,
    genus: usize,
    grid: *const SfGrid,
    n_zeta: usize,
    window: usize,
    out: *mut *mut SfFrameField,
) -> SfStatus {
    guard(|| {
        let data = HyperellipticSpectralData::new(complexes(slice(branch_points, 2 * genus, "branch_points")?)).map_err(fail)?;
        let grid = grid_of(deref(grid, "grid")?)?;
        let field = frames::symes_frame(&data, &grid, n_zeta, window).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(SfFrameField(field))), "out")
    })
}

/// Frames by dressing the vacuum; `epsilon <= 0` selects the default radius.
///
/// # Safety
/// As for [`sf_frames_symes`].
#[no_mangle]
pub unsafe extern "C" fn sf_frames_dress(
    branch_points: *const f64,
    genus: usize,
    grid: *const SfGrid,
    epsilon: f64,
    n_zeta: usize,
    window: usize,
    out: *mut *mut SfFrameField,
) -> SfStatus {
    guard(|| {
        let data = HyperellipticSpectralData::new(complexes(slice(branch_points, 2 * genus, "branch_points")?)).map_err(fail)?;
        let grid = grid_of(deref(grid, "grid")?)?;
        let eps = if epsilon > 0.0 { epsilon } else { frames::default_epsilon(&data) };
        let field = frames::dress_frame(&data, &grid, eps, n_zeta, window).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(SfFrameField(field))), "out")
    })
}

/// Bubbleton frames for lobe counts `p[0..len]`.
///
/// # Safety
/// `p` must point to `len` values; `grid` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_bubbleton(
    p: *const u32,
    len: usize,
    grid: *const SfGrid,
    n_zeta: usize,
    out: *mut *mut SfFrameField,
) -> SfStatus {
    guard(|| {
        let lobes = LobeCounts::new(slice(p, len, "p")?.to_vec()).map_err(fail)?;
        let nodal = spectral::bubbleton_branch_points(&lobes).map_err(fail)?;
        let grid = grid_of(deref(grid, "grid")?)?;
        let field = frames::rational_dress_frame(&nodal, &grid, n_zeta).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(SfFrameField(field))), "out")
    })
}

/// Number of grid points and of circle samples.
///
/// # Safety
/// `field` must come from one of the `sf_frames_*` constructors.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_shape(field: *const SfFrameField, n_points: *mut usize, n_zeta: *mut usize) -> SfStatus {
    guard(|| {
        let f = &deref(field, "field")?.0;
        write_out(n_points, f.grid().len(), "n_points")?;
        write_out(n_zeta, f.n_zeta(), "n_zeta")
    })
}

/// Frame at grid point `point` and circle sample `k` as 8 doubles `(re, im)` in row-major order.
///
/// # Safety
/// `field` must be valid and `out` must hold 8 doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_get(field: *const SfFrameField, point: usize, k: usize, out: *mut f64) -> SfStatus {
    guard(|| {
        let f = &deref(field, "field")?.0;
        if point >= f.grid().len() || k >= f.n_zeta() {
            set_error(&format!("index ({point}, {k}) out of range"));
            return Err(SfStatus::InvalidArgument);
        }
        let out = slice_mut(out, 8, "out")?;
        for (i, z) in f.frame(point, k).iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
        Ok(())
    })
}

/// Largest unitarity defect over all stored frames.
///
/// # Safety
/// `field` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_unitarity_defect(field: *const SfFrameField, out: *mut f64) -> SfStatus {
    guard(|| write_out(out, deref(field, "field")?.0.unitarity_defect(), "out"))
}

/// Largest discrete flatness defect over all circle samples.
///
/// # Safety
/// `field` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_flatness_residual(field: *const SfFrameField, out: *mut f64) -> SfStatus {
    guard(|| {
        let r = frames::flatness_residual_max(&deref(field, "field")?.0).map_err(fail)?;
        write_out(out, r, "out")
    })
}

/// Gauss map as `3 * n_points` doubles.
///
/// # Safety
/// `field` must be valid and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_gauss_map(field: *const SfFrameField, out: *mut f64, cap: usize) -> SfStatus {
    guard(|| {
        let g = frames::gauss_map(&deref(field, "field")?.0);
        check_capacity(3 * g.len(), cap)?;
        let out = slice_mut(out, cap, "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(&g) {
            o.copy_from_slice(v);
        }
        Ok(())
    })
}

/// # Safety
/// `field` must come from an `sf_frames_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_frames_free(field: *mut SfFrameField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Sym-Bobenko immersion at `zeta0 = (zeta_re, zeta_im)` with mean curvature `h`.
///
/// # Safety
/// `field` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_mesh_sym_bobenko(
    field: *const SfFrameField,
    zeta_re: f64,
    zeta_im: f64,
    h: f64,
    out: *mut *mut SfMesh,
) -> SfStatus {
    guard(|| {
        let mesh = surfaces::sym_bobenko(&deref(field, "field")?.0, Complex64::new(zeta_re, zeta_im), h).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(SfMesh(mesh))), "out")
    })
}

/// Vertex positions as `3 * n_vertices` doubles; `n_vertices` receives the count.
///
/// # Safety
/// `mesh` must be valid, `out` must hold `cap` doubles and `n_vertices` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_mesh_vertices(mesh: *const SfMesh, out: *mut f64, cap: usize, n_vertices: *mut usize) -> SfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        write_out(n_vertices, m.vertices.len(), "n_vertices")?;
        check_capacity(3 * m.vertices.len(), cap)?;
        let out = slice_mut(out, cap, "out")?;
        for (o, v) in out.chunks_exact_mut(3).zip(&m.vertices) {
            o.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Writes the mesh as OBJ, or PLY when `path` ends in `.ply`.
///
/// # Safety
/// `mesh` must be valid and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sf_mesh_export(mesh: *const SfMesh, path: *const c_char) -> SfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        if path.is_null() {
            return Err(null_pointer("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_error("path is not UTF-8");
            SfStatus::InvalidArgument
        })?;
        let path = Path::new(path);
        surfaces::export_mesh(m, path, MeshFormat::from_path(path)).map_err(fail)
    })
}

/// # Safety
/// `mesh` must come from [`sf_mesh_sym_bobenko`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_mesh_free(mesh: *mut SfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Grassmannian map from `k` double points and `m` simple points (pairs of doubles each).
///
/// # Safety
/// `double_points` must hold `2 * k` doubles, `simple_points` `2 * m`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_grassmann_new(
    double_points: *const f64,
    k: usize,
    simple_points: *const f64,
    m: usize,
    out: *mut *mut SfGrassmannMap,
) -> SfStatus {
    guard(|| {
        let p = complexes(slice(double_points, 2 * k, "double_points")?);
        let e = complexes(slice(simple_points, 2 * m, "simple_points")?);
        let data = P1SpectralData::new(p, e).map_err(fail)?;
        let map = EquivariantMapData::new(&data, FiberIndexing::Shifted).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(SfGrassmannMap { data, map })), "out")
    })
}

/// `k` and `n` of a map into `Gr_k(C^{n+1})`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_grassmann_dims(map: *const SfGrassmannMap, k: *mut usize, n: *mut usize) -> SfStatus {
    guard(|| {
        let g = deref(map, "map")?;
        write_out(k, g.data.k(), "k")?;
        write_out(n, g.data.n(), "n")
    })
}

/// Orthogonal projection onto the plane at `z` (`2k` doubles) as `2 (n+1)^2` doubles, row-major
/// `(re, im)` pairs.
///
/// # Safety
/// `map` must be valid, `z` must hold `2k` doubles and `out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_grassmann_projection(map: *const SfGrassmannMap, z: *const f64, out: *mut f64, cap: usize) -> SfStatus {
    guard(|| {
        let g = deref(map, "map")?;
        let z = complexes(slice(z, 2 * g.data.k(), "z")?);
        let plane = grassmann::pluriharmonic_map(&g.map, &z).map_err(fail)?;
        let d = plane.projection.nrows();
        check_capacity(2 * d * d, cap)?;
        let out = slice_mut(out, cap, "out")?;
        for r in 0..d {
            for c in 0..d {
                let v = plane.projection[(r, c)];
                out[2 * (r * d + c)] = v.re;
                out[2 * (r * d + c) + 1] = v.im;
            }
        }
        Ok(())
    })
}

/// Harmonicity residual along the complex line `t -> t a` with `a` given as `2k` doubles.
///
/// # Safety
/// All pointers must be valid; `direction` must hold `2k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_grassmann_harmonicity(
    map: *const SfGrassmannMap,
    direction: *const f64,
    grid: *const SfGrid,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let g = deref(map, "map")?;
        let a = complexes(slice(direction, 2 * g.data.k(), "direction")?);
        let grid = grid_of(deref(grid, "grid")?)?;
        let r = grassmann::harmonicity_residual(&g.map, &a, &grid).map_err(fail)?;
        write_out(out, r, "out")
    })
}

/// # Safety
/// `map` must come from [`sf_grassmann_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_grassmann_free(map: *mut SfGrassmannMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}
