use std::ffi::{CStr, CString};
use std::ptr;

use spectral_frames_ffi::*;

fn grid(x: f64, n: usize) -> SfGrid {
    SfGrid { x_min: -x, x_max: x, y_min: -x, y_max: x, nx: n, ny: n }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sf_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(sf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_output_is_rejected() {
    let g = grid(0.1, 5);
    let bp = [0.3, 0.4, 0.3, -0.4];
    let s = unsafe { sf_frames_symes(bp.as_ptr(), 2, &g, 16, 32, ptr::null_mut()) };
    assert_eq!(s, SfStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn invalid_grid_reports_message() {
    let g = SfGrid { x_min: 1.0, x_max: -1.0, y_min: 0.0, y_max: 1.0, nx: 5, ny: 5 };
    let bp = [0.3, 0.4, 0.3, -0.4];
    let mut f = ptr::null_mut();
    let s = unsafe { sf_frames_symes(bp.as_ptr(), 2, &g, 16, 32, &mut f) };
    assert_eq!(s, SfStatus::InvalidArgument);
    assert!(f.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn bubbleton_round_trip() {
    let p = [1u32, 3];
    let mut nodes = [0.0; 1];
    assert_eq!(unsafe { sf_bubbleton_nodes(p.as_ptr(), 2, nodes.as_mut_ptr(), 1) }, SfStatus::Ok);
    assert!(nodes[0] > 0.0 && nodes[0] < 1.0);
    assert_eq!(unsafe { sf_bubbleton_nodes(p.as_ptr(), 2, nodes.as_mut_ptr(), 0) }, SfStatus::BufferTooSmall);

    let g = grid(0.5, 9);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { sf_frames_bubbleton(p.as_ptr(), 2, &g, 16, &mut f) }, SfStatus::Ok);
    let (mut np, mut nz) = (0, 0);
    unsafe { sf_frames_shape(f, &mut np, &mut nz) };
    assert_eq!((np, nz), (81, 16));

    let mut defect = 1.0;
    unsafe { sf_frames_unitarity_defect(f, &mut defect) };
    assert!(defect < 1e-10, "{defect}");

    let mut m = [0.0; 8];
    assert_eq!(unsafe { sf_frames_get(f, 40, 3, m.as_mut_ptr()) }, SfStatus::Ok);
    // det = ad - bc for an SU(2) frame
    let det_re = (m[0] * m[6] - m[1] * m[7]) - (m[2] * m[4] - m[3] * m[5]);
    assert!((det_re - 1.0).abs() < 1e-10);
    assert_eq!(unsafe { sf_frames_get(f, 81, 0, m.as_mut_ptr()) }, SfStatus::InvalidArgument);

    let mut gauss = vec![0.0; 3 * 81];
    assert_eq!(unsafe { sf_frames_gauss_map(f, gauss.as_mut_ptr(), gauss.len()) }, SfStatus::Ok);
    for v in gauss.chunks(3) {
        assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-10);
    }

    let mut mesh = ptr::null_mut();
    assert_eq!(unsafe { sf_mesh_sym_bobenko(f, 1.0, 0.0, 0.5, &mut mesh) }, SfStatus::Ok);
    let mut nv = 0;
    let mut verts = vec![0.0; 3 * 81];
    assert_eq!(unsafe { sf_mesh_vertices(mesh, verts.as_mut_ptr(), verts.len(), &mut nv) }, SfStatus::Ok);
    assert_eq!(nv, 81);
    assert!(verts.iter().all(|x| x.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.obj").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sf_mesh_export(mesh, path.as_ptr()) }, SfStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("m.obj")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 81);

    unsafe {
        sf_mesh_free(mesh);
        sf_frames_free(f);
        sf_frames_free(ptr::null_mut());
    }
}

#[test]
fn symes_and_dress_agree() {
    let bp = [0.3, 0.4, 0.3, -0.4];
    let g = grid(0.1, 5);
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { sf_frames_symes(bp.as_ptr(), 2, &g, 16, 64, &mut a) }, SfStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { sf_frames_dress(bp.as_ptr(), 2, &g, 0.0, 16, 64, &mut b) }, SfStatus::Ok, "{}", last_error());
    let (mut fa, mut fb) = ([0.0; 8], [0.0; 8]);
    let mut worst: f64 = 0.0;
    for p in 0..25 {
        for k in [0, 5, 11] {
            unsafe {
                sf_frames_get(a, p, k, fa.as_mut_ptr());
                sf_frames_get(b, p, k, fb.as_mut_ptr());
            }
            for i in 0..8 {
                worst = worst.max((fa[i] - fb[i]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "{worst}");
    unsafe {
        sf_frames_free(a);
        sf_frames_free(b);
    }
}

#[test]
fn grassmann_projection_is_orthogonal_projector() {
    let p = [0.5, 0.2, -0.4, 0.3];
    let e = [0.1, -0.6];
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { sf_grassmann_new(p.as_ptr(), 2, e.as_ptr(), 1, &mut map) }, SfStatus::Ok, "{}", last_error());
    let (mut k, mut n) = (0, 0);
    unsafe { sf_grassmann_dims(map, &mut k, &mut n) };
    assert_eq!(k, 2);
    let d = n + 1;
    let z = [0.1, 0.05, -0.2, 0.1];
    let mut proj = vec![0.0; 2 * d * d];
    assert_eq!(unsafe { sf_grassmann_projection(map, z.as_ptr(), proj.as_mut_ptr(), proj.len()) }, SfStatus::Ok);
    let trace: f64 = (0..d).map(|i| proj[2 * (i * d + i)]).sum();
    assert!((trace - k as f64).abs() < 1e-10, "{trace}");
    for r in 0..d {
        for c in 0..d {
            let (a, b) = (2 * (r * d + c), 2 * (c * d + r));
            assert!((proj[a] - proj[b]).abs() < 1e-10 && (proj[a + 1] + proj[b + 1]).abs() < 1e-10);
        }
    }

    let dir = [1.0, 0.0, 0.0, 1.0];
    let residual = |n: usize| {
        let g = SfGrid { x_min: -0.3, x_max: 0.3, y_min: -0.3, y_max: 0.3, nx: n, ny: n };
        let mut r = f64::NAN;
        assert_eq!(unsafe { sf_grassmann_harmonicity(map, dir.as_ptr(), &g, &mut r) }, SfStatus::Ok);
        r
    };
    let (coarse, fine) = (residual(11), residual(21));
    // second-order stencil: halving h cuts the residual about fourfold
    assert!(fine < coarse / 3.0, "{coarse} {fine}");
    assert!(fine < 1e2 * 0.03 * 0.03, "{fine}");
    unsafe { sf_grassmann_free(map) };
}
