use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AugmentKind, AugmentSpec};
use crate::error::Result;
use crate::smooth::gaussian_smooth;
use crate::volume::{resample_affine, AffineTransform, Grid, Volume3D};

const CONTROL_POINTS: usize = 4;

/// Flip, rotate, zoom or warp by trilinear resampling with zero padding.
///
/// - flip reverses the x axis exactly
/// - rotate turns by `magnitude` degrees about axis `seed % 3` through the
///   centre of the field of view
/// - zoom scales about the centre by the factor `magnitude`
/// - warp displaces voxels by a seeded 4³ control grid, trilinearly
///   upsampled, with components up to `magnitude` times the axis extent
pub fn apply_spatial(vol: &Volume3D, spec: &AugmentSpec) -> Result<Volume3D> {
    use AugmentKind::*;
    spec.expect(&[Flip, Rotate, Zoom, Warp], "apply_spatial")?;
    let m = spec.magnitude;
    match spec.kind {
        Flip => Ok(flip_x(vol)),
        Zoom if m == 1.0 => Ok(vol.clone()),
        Zoom => Ok(zoom(vol, m)),
        _ if m == 0.0 => Ok(vol.clone()),
        Rotate => {
            let axis = (spec.seed % 3) as usize;
            // output voxel at world p reads the input at R⁻¹ p
            let inv = AffineTransform::rotation_about(axis, -m, vol.grid().center_world());
            Ok(resample_affine(vol, vol.grid(), &inv))
        }
        Warp => warp(vol, m, spec.seed),
        _ => unreachable!(),
    }
}

fn flip_x(vol: &Volume3D) -> Volume3D {
    let nx = vol.dims()[0];
    Volume3D::from_fn(vol.grid().clone(), |x, y, z| vol.get(nx - 1 - x, y, z)).expect("flip keeps finite values")
}

fn voxel_center(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|n| (n as f64 - 1.0) / 2.0)
}

fn zoom(vol: &Volume3D, factor: f64) -> Volume3D {
    let c = voxel_center(vol.dims());
    Volume3D::from_fn(vol.grid().clone(), |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        vol.sample(std::array::from_fn(|a| c[a] + (p[a] - c[a]) / factor))
    })
    .expect("zoom keeps finite values")
}

fn warp(vol: &Volume3D, magnitude: f64, seed: u64) -> Result<Volume3D> {
    let dims = vol.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = CONTROL_POINTS;
    let mut control = Vec::with_capacity(n * n * n);
    for _ in 0..n * n * n {
        let d: [f64; 3] = std::array::from_fn(|a| rng.random_range(-1.0..=1.0) * magnitude * dims[a] as f64);
        control.push(d);
    }
    let ctrl_grid = Grid::unit([n, n, n]);
    let components: Vec<Volume3D> = (0..3)
        .map(|a| Volume3D::new(ctrl_grid.clone(), control.iter().map(|d| d[a]).collect()))
        .collect::<Result<_>>()?;
    // control points sit at the volume corners and thirds
    let to_ctrl: [f64; 3] = std::array::from_fn(|a| {
        if dims[a] > 1 {
            (n - 1) as f64 / (dims[a] - 1) as f64
        } else {
            0.0
        }
    });
    Volume3D::from_fn(vol.grid().clone(), |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let q: [f64; 3] = std::array::from_fn(|a| p[a] * to_ctrl[a]);
        let d: [f64; 3] = std::array::from_fn(|a| components[a].sample(q));
        vol.sample(std::array::from_fn(|a| p[a] + d[a]))
    })
}

/// Downsample-and-restore or Gaussian blur.
///
/// Downsampling by factor `f` resamples to `round(n / f)` voxels per axis
/// with aligned corners and back to `n` voxels, both trilinear. Blur
/// smooths with FWHM `magnitude` mm.
pub fn downsample_blur(vol: &Volume3D, spec: &AugmentSpec) -> Result<Volume3D> {
    spec.expect(&[AugmentKind::Downsample, AugmentKind::Blur], "downsample_blur")?;
    if spec.magnitude == 0.0 {
        return Ok(vol.clone());
    }
    match spec.kind {
        AugmentKind::Blur => Ok(gaussian_smooth(vol, spec.magnitude)),
        _ => downsample(vol, spec.magnitude as usize),
    }
}

fn downsample(vol: &Volume3D, factor: usize) -> Result<Volume3D> {
    let dims = vol.dims();
    let small: [usize; 3] = dims.map(|n| ((n as f64 / factor as f64).round() as usize).max(1));
    let ratio = |from: usize, to: usize| {
        if to > 1 {
            (from - 1) as f64 / (to - 1) as f64
        } else {
            0.0
        }
    };
    let down: [f64; 3] = std::array::from_fn(|a| ratio(dims[a], small[a]));
    let up: [f64; 3] = std::array::from_fn(|a| ratio(small[a], dims[a]));
    let low = Volume3D::from_fn(Grid::unit(small), |x, y, z| {
        vol.sample([x as f64 * down[0], y as f64 * down[1], z as f64 * down[2]])
    })?;
    Volume3D::from_fn(vol.grid().clone(), |x, y, z| {
        low.sample([x as f64 * up[0], y as f64 * up[1], z as f64 * up[2]])
    })
}
