use std::ffi::{c_char, CStr};
use std::path::PathBuf;

use vbmkit::augment::{apply, AugmentKind, AugmentSpec};
use vbmkit::nifti::{read_nifti, write_nifti};
use vbmkit::smooth::gaussian_smooth;
use vbmkit::tissue::{dice_score, tissue_to_probabilities, TissueMap};
use vbmkit::volume::{Grid, Volume3D};

use crate::error::{guard, Failure, VbmStatus};

/// Scalar volume, x fastest in memory.
pub struct VbmVolume {
    pub(crate) inner: Volume3D,
}

pub(crate) unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

pub(crate) unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

pub(crate) fn check_out<T>(out: *mut *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::null(what))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

pub(crate) unsafe fn volume_out(out: *mut *mut VbmVolume, v: Volume3D) {
    put(out, VbmVolume { inner: v });
}

/// Copies `nx*ny*nz` values from `data` into a new volume with the given
/// voxel spacing in millimetres and an axis-aligned world frame.
///
/// # Safety
/// `data` must point to `nx*ny*nz` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: *const f64,
    data: *const f64,
    out: *mut *mut VbmVolume,
) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        let sp = std::slice::from_raw_parts(get(spacing, "spacing")?, 3);
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Failure::invalid("dims overflow"))?;
        let values = std::slice::from_raw_parts(get(data, "data")?, n).to_vec();
        let grid = Grid::with_spacing([nx, ny, nz], [sp[0], sp[1], sp[2]])?;
        volume_out(out, Volume3D::new(grid, values)?);
        Ok(())
    })
}

/// Reads a NIfTI-1 file (`.nii` or `.nii.gz`).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_read(path: *const c_char, out: *mut *mut VbmVolume) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        let v = read_nifti(path_arg(path)?)?;
        volume_out(out, v);
        Ok(())
    })
}

/// Writes a float32 NIfTI-1 file.
///
/// # Safety
/// `vol` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_write(vol: *const VbmVolume, path: *const c_char) -> VbmStatus {
    guard(|| {
        write_nifti(&get(vol, "vol")?.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Writes the three dimensions into `dims`.
///
/// # Safety
/// `vol` must be a live handle and `dims` must hold three values.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_dims(vol: *const VbmVolume, dims: *mut usize) -> VbmStatus {
    guard(|| {
        let d = get(vol, "vol")?.inner.dims();
        if dims.is_null() {
            return Err(Failure::null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&d);
        Ok(())
    })
}

/// Copies the voxel values into `buf`, which must hold `len` doubles with
/// `len` equal to the voxel count.
///
/// # Safety
/// `vol` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_copy_data(vol: *const VbmVolume, buf: *mut f64, len: usize) -> VbmStatus {
    guard(|| {
        let data = get(vol, "vol")?.inner.data();
        if buf.is_null() {
            return Err(Failure::null("buf"));
        }
        if len != data.len() {
            return Err(Failure::invalid(format!("buffer holds {len} values, volume has {}", data.len())));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(data);
        Ok(())
    })
}

/// Releases a volume; null is ignored.
///
/// # Safety
/// `vol` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vbm_volume_free(vol: *mut VbmVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Gaussian smoothing with a kernel of `fwhm_mm` full width at half maximum.
///
/// # Safety
/// `vol` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_smooth(vol: *const VbmVolume, fwhm_mm: f64, out: *mut *mut VbmVolume) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        let v = &get(vol, "vol")?.inner;
        if !(fwhm_mm.is_finite() && fwhm_mm >= 0.0) {
            return Err(Failure::invalid(format!("fwhm {fwhm_mm} must be finite and non-negative")));
        }
        volume_out(out, gaussian_smooth(v, fwhm_mm));
        Ok(())
    })
}

/// Applies one augmentation, named as in the configuration file
/// (`"bias_field"`, `"ghosting"`, ...).
///
/// # Safety
/// `vol` must be a live handle, `kind` a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_augment(
    vol: *const VbmVolume,
    kind: *const c_char,
    magnitude: f64,
    seed: u64,
    out: *mut *mut VbmVolume,
) -> VbmStatus {
    guard(|| {
        check_out(out, "out")?;
        let v = &get(vol, "vol")?.inner;
        let name = CStr::from_ptr(get(kind, "kind")?)
            .to_str()
            .map_err(|_| Failure::invalid("kind is not valid UTF-8"))?;
        let spec = AugmentSpec::new(name.parse::<AugmentKind>()?, magnitude, seed)?;
        volume_out(out, apply(v, &spec)?);
        Ok(())
    })
}

/// Splits a tissue map with values in [0, 3] into CSF, GM and WM
/// probability maps.
///
/// # Safety
/// `tissue` must be a live handle and the three out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_tissue_probabilities(
    tissue: *const VbmVolume,
    csf: *mut *mut VbmVolume,
    gm: *mut *mut VbmVolume,
    wm: *mut *mut VbmVolume,
) -> VbmStatus {
    guard(|| {
        check_out(csf, "csf")?;
        check_out(gm, "gm")?;
        check_out(wm, "wm")?;
        let map = TissueMap::new(get(tissue, "tissue")?.inner.clone())?;
        let p = tissue_to_probabilities(&map);
        volume_out(csf, p.csf);
        volume_out(gm, p.gm);
        volume_out(wm, p.wm);
        Ok(())
    })
}

/// Dice overlap of one hard label between two tissue maps.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vbm_dice(a: *const VbmVolume, b: *const VbmVolume, label: u8, out: *mut f64) -> VbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = dice_score(&get(a, "a")?.inner, &get(b, "b")?.inner, label)?;
        Ok(())
    })
}
