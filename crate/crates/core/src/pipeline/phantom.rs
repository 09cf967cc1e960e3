//! Deterministic synthetic volumes standing in for templates and subjects.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tissue::TissueMap;
use crate::volume::{AffineTransform, Grid, Volume3D};

pub const MIN_DIM: usize = 16;

/// T1-like intensity of background, CSF, GM and WM.
pub const CLASS_INTENSITY: [f64; 4] = [0.0, 0.25, 0.65, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    BlobPair,
    TissueShells,
    Checkerboard,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "blob_pair" => Ok(Self::BlobPair),
            "tissue_shells" => Ok(Self::TissueShells),
            "checkerboard" => Ok(Self::Checkerboard),
            _ => Err(Error::InvalidArgument(format!("unknown phantom kind '{s}'"))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BlobPair => "blob_pair",
            Self::TissueShells => "tissue_shells",
            Self::Checkerboard => "checkerboard",
        })
    }
}

fn check_dims(grid: &Grid) -> Result<()> {
    if grid.dims().iter().any(|&d| d < MIN_DIM) {
        return Err(Error::InvalidArgument(format!(
            "phantom dims must be at least {MIN_DIM} per axis, got {:?}",
            grid.dims()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Fold {
    k_azimuth: f64,
    k_elevation: f64,
    phase: f64,
    amplitude: f64,
}

/// Lobed head of nested CSF, GM and WM shells with a folded GM/WM
/// boundary, two lateral ventricles and deep GM nuclei, defined in world
/// millimetres.
#[derive(Debug, Clone)]
pub struct ShellPhantom {
    center: [f64; 3],
    half_extent: [f64; 3],
    ramp_mm: f64,
    lobes: Vec<Fold>,
    folds: Vec<Fold>,
}

const RADII: [f64; 3] = [0.72, 0.84, 0.66];
const GM_OUTER: f64 = 0.9;
const WM_OUTER: f64 = 0.72;
const VENTRICLES: [([f64; 3], [f64; 3]); 2] = [
    ([0.12, 0.08, 0.1], [0.06, 0.25, 0.12]),
    ([-0.12, 0.08, 0.1], [0.06, 0.25, 0.12]),
];
const NUCLEI: [([f64; 3], [f64; 3]); 4] = [
    ([0.2, -0.12, -0.06], [0.07, 0.1, 0.07]),
    ([-0.2, -0.12, -0.06], [0.07, 0.1, 0.07]),
    ([0.08, -0.3, -0.12], [0.05, 0.08, 0.06]),
    ([-0.08, -0.3, -0.12], [0.05, 0.08, 0.06]),
];

impl ShellPhantom {
    /// Phantom filling the field of view of `grid`, partial-volume ramps one
    /// and a half voxels wide.
    pub fn new(grid: &Grid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lobes = (0..3)
            .map(|_| Fold {
                k_azimuth: rng.random_range(2..=3) as f64,
                k_elevation: rng.random_range(1..=2) as f64,
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: rng.random_range(0.08..0.14),
            })
            .collect();
        let folds = (0..4)
            .map(|_| Fold {
                k_azimuth: rng.random_range(2..=5) as f64,
                k_elevation: rng.random_range(1..=3) as f64,
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: rng.random_range(0.03..0.05),
            })
            .collect();
        let d = grid.dims();
        let sp = grid.spacing();
        Self {
            center: grid.center_world(),
            half_extent: std::array::from_fn(|a| d[a] as f64 * sp[a] / 2.0),
            ramp_mm: 1.5 * sp.iter().cloned().fold(0.0, f64::max),
            lobes,
            folds,
        }
    }

    fn ramp(&self, dist_mm: f64) -> f64 {
        (0.5 - dist_mm / self.ramp_mm).clamp(0.0, 1.0)
    }

    /// Continuous tissue value at a world point.
    pub fn tissue_at(&self, p: [f64; 3]) -> f64 {
        let u: [f64; 3] = std::array::from_fn(|a| (p[a] - self.center[a]) / self.half_extent[a]);
        let q: [f64; 3] = std::array::from_fn(|a| u[a] / RADII[a]);
        let mm = (0..3).map(|a| RADII[a] * self.half_extent[a]).sum::<f64>() / 3.0;

        let azimuth = q[1].atan2(q[0]);
        let elevation = q[2].atan2(q[0].hypot(q[1]));
        let modulation = |set: &[Fold]| -> f64 {
            set.iter()
                .map(|f| f.amplitude * (f.k_azimuth * azimuth + f.phase).sin() * (f.k_elevation * elevation).cos())
                .sum()
        };
        // lobes bend every shell together, folds only the GM/WM boundary
        let rho = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() / (1.0 + modulation(&self.lobes));
        let fold = modulation(&self.folds);

        let mut t = self.ramp((rho - 1.0) * mm)
            + self.ramp((rho - GM_OUTER) * mm)
            + self.ramp((rho - WM_OUTER * (1.0 + fold)) * mm);
        // deep structures sit inside the white matter: GM nuclei drop the
        // value by one, ventricles by two
        for (depth, set) in [(1.0, &NUCLEI[..]), (2.0, &VENTRICLES[..])] {
            for &(c, r) in set {
                let v: [f64; 3] = std::array::from_fn(|a| (u[a] - c[a]) / r[a]);
                let rv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let scale = (0..3).map(|a| r[a] * self.half_extent[a]).sum::<f64>() / 3.0;
                t -= depth * self.ramp((rv - 1.0) * scale);
            }
        }
        t.clamp(0.0, 3.0)
    }

    /// True inside the ventricles and their partial-volume rim, where a
    /// WM/CSF mixture would read as GM.
    pub fn in_gm_mask(&self, p: [f64; 3]) -> bool {
        let u: [f64; 3] = std::array::from_fn(|a| (p[a] - self.center[a]) / self.half_extent[a]);
        VENTRICLES.iter().any(|&(c, r)| {
            let v: [f64; 3] = std::array::from_fn(|a| (u[a] - c[a]) / r[a]);
            let rv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let scale = (0..3).map(|a| r[a] * self.half_extent[a]).sum::<f64>() / 3.0;
            (rv - 1.0) * scale <= self.ramp_mm
        })
    }

    /// Binary GM mask on `grid`, see [`ShellPhantom::in_gm_mask`].
    pub fn render_gm_mask(&self, grid: &Grid, world: &AffineTransform) -> Result<Volume3D> {
        Volume3D::from_fn(grid.clone(), |x, y, z| {
            let inside = self.in_gm_mask(world.apply(grid.voxel_to_world([x as f64, y as f64, z as f64])));
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Samples the phantom on `grid`; `world` maps grid world coordinates to
    /// phantom coordinates.
    pub fn render(&self, grid: &Grid, world: &AffineTransform) -> Result<TissueMap> {
        let vol = Volume3D::from_fn(grid.clone(), |x, y, z| {
            self.tissue_at(world.apply(grid.voxel_to_world([x as f64, y as f64, z as f64])))
        })?;
        TissueMap::new(vol)
    }
}

/// Concentric CSF/GM/WM shells on `grid`.
pub fn tissue_shells(grid: &Grid, seed: u64) -> Result<TissueMap> {
    check_dims(grid)?;
    ShellPhantom::new(grid, seed).render(grid, &AffineTransform::identity())
}

/// Piecewise-linear T1-like intensity of a tissue value.
pub fn tissue_intensity(t: f64) -> f64 {
    let t = t.clamp(0.0, 3.0);
    let k = (t.floor() as usize).min(2);
    let f = t - k as f64;
    CLASS_INTENSITY[k] * (1.0 - f) + CLASS_INTENSITY[k + 1] * f
}

pub fn intensity_image(map: &TissueMap) -> Volume3D {
    map.volume().map(tissue_intensity).expect("intensities are finite")
}

/// Binary brain mask: tissue value above one half.
pub fn brain_mask(map: &TissueMap) -> Volume3D {
    map.volume()
        .map(|t| if t > 0.5 { 1.0 } else { 0.0 })
        .expect("mask values are finite")
}

/// Two Gaussian blobs; in the second volume each blob is displaced by
/// `offset_vox` voxels along a seeded direction.
pub fn blob_pair(grid: &Grid, seed: u64, offset_vox: f64) -> Result<(Volume3D, Volume3D)> {
    check_dims(grid)?;
    if !(offset_vox >= 0.0 && offset_vox.is_finite()) {
        return Err(Error::InvalidArgument(format!("blob offset must be non-negative, got {offset_vox}")));
    }
    let d = grid.dims().map(|n| n as f64);
    let sigma = d.iter().cloned().fold(f64::INFINITY, f64::min) / 10.0;
    let mid = d.map(|n| (n - 1.0) / 2.0);
    let centers = [
        [mid[0] - 0.2 * d[0], mid[1], mid[2]],
        [mid[0] + 0.2 * d[0], mid[1], mid[2]],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moved: Vec<[f64; 3]> = centers
        .iter()
        .map(|c| {
            let az = rng.random_range(0.0..2.0 * PI);
            let cos_el: f64 = rng.random_range(-1.0..1.0);
            let sin_el = (1.0 - cos_el * cos_el).sqrt();
            let dir = [sin_el * az.cos(), sin_el * az.sin(), cos_el];
            std::array::from_fn(|a| c[a] + offset_vox * dir[a])
        })
        .collect();
    let render = |cs: &[[f64; 3]]| {
        Volume3D::from_fn(grid.clone(), |x, y, z| {
            let p = [x as f64, y as f64, z as f64];
            cs.iter()
                .map(|c| {
                    let r2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                    (-r2 / (2.0 * sigma * sigma)).exp()
                })
                .sum()
        })
    };
    Ok((render(&centers)?, render(&moved)?))
}

/// Alternating 0/1 blocks of `period` voxels; period 1 is the Nyquist pattern.
pub fn checkerboard(grid: &Grid, period: usize) -> Result<Volume3D> {
    check_dims(grid)?;
    if period == 0 {
        return Err(Error::InvalidArgument("checkerboard period must be positive".into()));
    }
    Volume3D::from_fn(grid.clone(), |x, y, z| ((x / period + y / period + z / period) % 2) as f64)
}
