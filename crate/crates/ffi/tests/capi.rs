use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use vbmkit_ffi::*;

fn last_error() -> String {
    let p = vbm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn make_volume(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> *mut VbmVolume {
    let mut data = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(f(x, y, z));
            }
        }
    }
    let mut out = ptr::null_mut();
    let st = unsafe { vbm_volume_new(dims[0], dims[1], dims[2], [1.0; 3].as_ptr(), data.as_ptr(), &mut out) };
    assert_eq!(st, VbmStatus::Ok);
    out
}

fn copy_out(v: *const VbmVolume) -> Vec<f64> {
    let mut dims = [0usize; 3];
    assert_eq!(unsafe { vbm_volume_dims(v, dims.as_mut_ptr()) }, VbmStatus::Ok);
    let mut buf = vec![0.0; dims.iter().product()];
    assert_eq!(unsafe { vbm_volume_copy_data(v, buf.as_mut_ptr(), buf.len()) }, VbmStatus::Ok);
    buf
}

fn blob(c: [f64; 3], r: f64) -> impl Fn(usize, usize, usize) -> f64 {
    move |x, y, z| {
        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
        (-d2 / (2.0 * r * r)).exp()
    }
}

#[test]
fn volume_round_trip_through_file() {
    let v = make_volume([4, 3, 2], |x, y, z| (x + 10 * y + 100 * z) as f64);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("v.nii").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vbm_volume_write(v, path.as_ptr()) }, VbmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { vbm_volume_read(path.as_ptr(), &mut back) }, VbmStatus::Ok);
    assert_eq!(copy_out(v), copy_out(back));
    unsafe {
        vbm_volume_free(v);
        vbm_volume_free(back);
    }
}

#[test]
fn null_arguments_report_status_and_message() {
    let mut out = ptr::null_mut();
    let st = unsafe { vbm_volume_new(2, 2, 2, [1.0; 3].as_ptr(), ptr::null(), &mut out) };
    assert_eq!(st, VbmStatus::NullPointer);
    assert!(out.is_null());
    assert!(last_error().contains("data"));
    vbm_clear_error();
    assert!(vbm_last_error().is_null());
    unsafe { vbm_volume_free(ptr::null_mut()) };
    unsafe { vbm_field_free(ptr::null_mut()) };
}

#[test]
fn errors_map_to_categories() {
    let missing = CString::new("/nonexistent/dir/v.nii").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { vbm_volume_read(missing.as_ptr(), &mut out) }, VbmStatus::Io);

    let v = make_volume([16, 16, 16], |_, _, _| 1.0);
    let kind = CString::new("ghosting").unwrap();
    assert_eq!(
        unsafe { vbm_augment(v, kind.as_ptr(), 2.0, 0, &mut out) },
        VbmStatus::InvalidArgument
    );
    assert!(last_error().contains("ghosting"));
    let bogus = CString::new("sharpen").unwrap();
    assert_eq!(
        unsafe { vbm_augment(v, bogus.as_ptr(), 0.1, 0, &mut out) },
        VbmStatus::InvalidArgument
    );

    let bad = make_volume([2, 2, 2], |_, _, _| 3.5);
    let (mut a, mut b, mut c) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { vbm_tissue_probabilities(bad, &mut a, &mut b, &mut c) },
        VbmStatus::Tissue
    );

    let other = make_volume([8, 8, 8], |_, _, _| 1.0);
    let mut d = 0.0;
    assert_eq!(unsafe { vbm_dice(v, other, 2, &mut d) }, VbmStatus::Geometry);
    unsafe {
        vbm_volume_free(v);
        vbm_volume_free(bad);
        vbm_volume_free(other);
    }
}

#[test]
fn wrappers_match_the_rust_api() {
    let v = make_volume([16, 16, 16], blob([8.0, 8.0, 8.0], 3.0));
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { vbm_smooth(v, 4.0, &mut s) }, VbmStatus::Ok);
    let vol = vbmkit::volume::Volume3D::new(vbmkit::volume::Grid::unit([16; 3]), copy_out(v)).unwrap();
    let expected = vbmkit::smooth::gaussian_smooth(&vol, 4.0);
    assert_eq!(copy_out(s), expected.data());

    let kind = CString::new("bias_field").unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { vbm_augment(v, kind.as_ptr(), 0.5, 3, &mut a) }, VbmStatus::Ok);
    let spec = vbmkit::augment::AugmentSpec::new(vbmkit::augment::AugmentKind::BiasField, 0.5, 3).unwrap();
    assert_eq!(copy_out(a), vbmkit::augment::apply(&vol, &spec).unwrap().data());

    let t = make_volume([4, 4, 4], |x, _, _| x as f64 * 0.9);
    let (mut csf, mut gm, mut wm) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { vbm_tissue_probabilities(t, &mut csf, &mut gm, &mut wm) },
        VbmStatus::Ok
    );
    let (pc, pg, pw) = (copy_out(csf), copy_out(gm), copy_out(wm));
    for i in 0..pc.len() {
        let x = (i % 4) as f64 * 0.9;
        let bg = (1.0 - x).max(0.0);
        assert!((pc[i] + pg[i] + pw[i] + bg - 1.0).abs() < 1e-12);
    }
    let mut d = 0.0;
    assert_eq!(unsafe { vbm_dice(t, t, 2, &mut d) }, VbmStatus::Ok);
    assert_eq!(d, 1.0);
    unsafe {
        for p in [v, s, a, t, csf, gm, wm] {
            vbm_volume_free(p);
        }
    }
}

#[test]
fn registration_reduces_mismatch() {
    let fixed = make_volume([24; 3], blob([12.0, 12.0, 12.0], 4.0));
    let moving = make_volume([24; 3], blob([13.5, 12.0, 12.0], 4.0));
    let mut opts = vbm_register_options_default();
    opts.iterations = 40;
    let (mut fwd, mut bwd, mut warped) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    let st = unsafe { vbm_register(moving, fixed, &opts, &mut fwd, &mut bwd, &mut warped) };
    assert_eq!(st, VbmStatus::Ok, "{}", last_error());

    let (f, m, w) = (copy_out(fixed), copy_out(moving), copy_out(warped));
    let mse = |a: &[f64]| a.iter().zip(&f).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / f.len() as f64;
    assert!(mse(&w) < 0.2 * mse(&m), "{} vs {}", mse(&w), mse(&m));

    let mut again = ptr::null_mut();
    assert_eq!(unsafe { vbm_field_warp(fwd, moving, &mut again) }, VbmStatus::Ok);
    assert_eq!(copy_out(again), w);

    let mut jmin = 0.0;
    assert_eq!(unsafe { vbm_field_min_jacobian(fwd, &mut jmin) }, VbmStatus::Ok);
    let mut jac = ptr::null_mut();
    assert_eq!(unsafe { vbm_field_jacobian(fwd, &mut jac) }, VbmStatus::Ok);
    let j = copy_out(jac);
    assert!(jmin > 0.0);
    assert_eq!(j.iter().cloned().fold(f64::INFINITY, f64::min), jmin);

    opts.iterations = 0;
    let st = unsafe { vbm_register(moving, fixed, &opts, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, VbmStatus::InvalidArgument);
    unsafe {
        for p in [fixed, moving, warped, again, jac] {
            vbm_volume_free(p);
        }
        vbm_field_free(fwd);
        vbm_field_free(bwd);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(vbm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/vbmkit.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ VbmRegisterOptions o = vbm_register_options_default(); \
             return o.tau == 7 && VBM_STATUS_OK == 0 ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(st) => assert!(st.success(), "{cc} rejected the header"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
