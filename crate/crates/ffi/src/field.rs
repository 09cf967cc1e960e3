use vbmkit::registration::{
    diffeo_register_channels, jacobian_determinant, min_jacobian, warp, DescentConfig, DiffeoOptions,
    DisplacementField3D, ElasticityParams, ShootingConfig,
};

use crate::error::{guard, Failure, VbmStatus};
use crate::volume::{check_out, get, put, volume_out, VbmVolume};

/// Displacement field in voxel units.
pub struct VbmField {
    pub(crate) inner: DisplacementField3D,
}

/// Registration settings; start from [`vbm_register_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VbmRegisterOptions {
    pub iterations: usize,
    pub mu: f64,
    pub lambda: f64,
    /// Non-positive selects 0.01 divided by the voxel count.
    pub big_lambda: f64,
    pub tau: u32,
    pub initial_step: f64,
    pub multiresolution: bool,
}

#[no_mangle]
pub extern "C" fn vbm_register_options_default() -> VbmRegisterOptions {
    VbmRegisterOptions {
        iterations: 200,
        mu: 1.0,
        lambda: 0.5,
        big_lambda: 0.0,
        tau: 7,
        initial_step: 0.25,
        multiresolution: false,
    }
}

/// Diffeomorphic registration of `moving` to `fixed`. Writes the forward
/// deformation (warping `moving` onto `fixed`), its inverse, and the
/// warped image. Any of the three out-pointers may be null.
///
/// # Safety
/// `moving`, `fixed` and `opts` must be valid; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_register(
    moving: *const VbmVolume,
    fixed: *const VbmVolume,
    opts: *const VbmRegisterOptions,
    forward: *mut *mut VbmField,
    backward: *mut *mut VbmField,
    warped: *mut *mut VbmVolume,
) -> VbmStatus {
    guard(|| {
        let m = &get(moving, "moving")?.inner;
        let f = &get(fixed, "fixed")?.inner;
        let o = *get(opts, "opts")?;
        let big = if o.big_lambda > 0.0 {
            o.big_lambda
        } else {
            0.01 / f.len().max(1) as f64
        };
        let params = ElasticityParams::new(o.mu, o.lambda, big)?;
        let diffeo = DiffeoOptions {
            iterations: o.iterations,
            descent: DescentConfig {
                initial_step: o.initial_step,
                ..DescentConfig::default()
            },
            multiresolution: o.multiresolution,
            reject_folding: true,
        };
        let res = diffeo_register_channels(&[m], &[f], &params, ShootingConfig::new(o.tau)?, &diffeo)?;
        if !warped.is_null() {
            volume_out(warped, warp(m, &res.forward)?);
        }
        if !forward.is_null() {
            put(forward, VbmField { inner: res.forward });
        }
        if !backward.is_null() {
            put(backward, VbmField { inner: res.backward });
        }
        Ok(())
    })
}

/// Resamples `vol` through `field`.
///
/// # Safety
/// `field` and `vol` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_field_warp(
    field: *const VbmField,
    vol: *const VbmVolume,
    out: *mut *mut VbmVolume,
) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        volume_out(out, warp(&get(vol, "vol")?.inner, &get(field, "field")?.inner)?);
        Ok(())
    })
}

/// Voxel-wise Jacobian determinant of the deformation.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_field_jacobian(field: *const VbmField, out: *mut *mut VbmVolume) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        volume_out(out, jacobian_determinant(&get(field, "field")?.inner));
        Ok(())
    })
}

/// Smallest Jacobian determinant of the deformation.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_field_min_jacobian(field: *const VbmField, out: *mut f64) -> VbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = min_jacobian(&get(field, "field")?.inner);
        Ok(())
    })
}

/// Releases a field; null is ignored.
///
/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vbm_field_free(field: *mut VbmField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}
