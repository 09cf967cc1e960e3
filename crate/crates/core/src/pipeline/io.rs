//! File helpers shared by the pipeline and the command line.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nifti::{read_image, write_nifti, write_nifti_4d};
use crate::registration::DisplacementField3D;
use crate::volume::{Grid, Volume3D};

use super::phantom::{blob_pair, brain_mask, checkerboard, intensity_image, PhantomKind, ShellPhantom};

/// `path` relative to `root` with forward slashes, or the full path when it
/// lies outside.
pub fn relative(path: &Path, root: &Path) -> String {
    let Ok(rel) = path.strip_prefix(root) else {
        return path.to_string_lossy().into_owned();
    };
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes a displacement field as a 4-D NIfTI with x, y, z components.
pub fn write_field(field: &DisplacementField3D, path: &Path) -> Result<()> {
    let [x, y, z] = field.components();
    write_nifti_4d(field.grid(), &[&x, &y, &z], path)
}

pub fn read_field(path: &Path) -> Result<DisplacementField3D> {
    let img = read_image(path)?;
    if img.volumes.len() != 3 {
        return Err(Error::InvalidVolume(format!(
            "{} holds {} volumes, a displacement field needs 3",
            path.display(),
            img.volumes.len()
        )));
    }
    let comps: Vec<Volume3D> = img
        .volumes
        .into_iter()
        .map(|d| Volume3D::new(img.grid.clone(), d))
        .collect::<Result<_>>()?;
    DisplacementField3D::from_components([&comps[0], &comps[1], &comps[2]])
}

/// Phantom files written by [`write_phantom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomRequest {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub seed: u64,
    /// Blob displacement in voxels (blob pair only).
    pub offset_vox: f64,
    /// Checkerboard block size (checkerboard only).
    pub period: usize,
}

/// Writes a phantom into `dir` and returns the written paths.
///
/// - blob pair: `fixed.nii`, `moving.nii`
/// - tissue shells: `p0.nii` (tissue map), `t1.nii`, `mask.nii`, `gm_mask.nii`
/// - checkerboard: `checkerboard.nii`
pub fn write_phantom(req: &PhantomRequest, dir: &Path) -> Result<Vec<PathBuf>> {
    if !(req.spacing_mm.is_finite() && req.spacing_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("spacing {} must be positive", req.spacing_mm)));
    }
    let grid = Grid::with_spacing(req.dims, [req.spacing_mm; 3])?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(&str, Volume3D)> = Vec::new();
    match req.kind {
        PhantomKind::BlobPair => {
            let (fixed, moving) = blob_pair(&grid, req.seed, req.offset_vox)?;
            files.push(("fixed.nii", fixed));
            files.push(("moving.nii", moving));
        }
        PhantomKind::TissueShells => {
            let tissue = super::phantom::tissue_shells(&grid, req.seed)?;
            let ph = ShellPhantom::new(&grid, req.seed);
            let gm_mask = ph.render_gm_mask(&grid, &crate::volume::AffineTransform::identity())?;
            files.push(("t1.nii", intensity_image(&tissue)));
            files.push(("mask.nii", brain_mask(&tissue)));
            files.push(("gm_mask.nii", gm_mask));
            files.push(("p0.nii", tissue.into_volume()));
        }
        PhantomKind::Checkerboard => {
            files.push(("checkerboard.nii", checkerboard(&grid, req.period)?));
        }
    }
    let mut out = Vec::new();
    for (name, vol) in files {
        let p = dir.join(name);
        write_nifti(&vol, &p)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::random_smooth_field;

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::unit([6, 5, 4]);
        let f = random_smooth_field(&g, 3, 1.5, 1.0);
        let p = dir.path().join("f.nii");
        write_field(&f, &p).unwrap();
        let back = read_field(&p).unwrap();
        for (a, b) in f.data().iter().zip(back.data()) {
            for k in 0..3 {
                assert_eq!(a[k] as f32 as f64, b[k]);
            }
        }
    }

    #[test]
    fn relative_paths() {
        assert_eq!(relative(Path::new("/a/b/c.nii"), Path::new("/a")), "b/c.nii");
        assert_eq!(relative(Path::new("/x/c.nii"), Path::new("/a")), "/x/c.nii");
    }
}
