//! Scalar volumes on regular voxel grids.
//!
//! Data is stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Values are kept in `f64`; files store `f32`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Voxel grid geometry shared by volumes and displacement fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Matrix4<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        let linear: Matrix3<f64> = affine.fixed_view::<3, 3>(0, 0).into_owned();
        let det = linear.determinant();
        if !det.is_finite() || det.abs() < 1e-12 || affine.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("affine is singular".into()));
        }
        Ok(Self {
            dims,
            spacing,
            affine,
        })
    }

    /// Grid with a spacing-diagonal affine and the origin at voxel 0.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let mut affine = Matrix4::identity();
        for a in 0..3 {
            affine[(a, a)] = spacing[a];
        }
        Self::new(dims, spacing, affine)
    }

    /// Isotropic 1 mm grid.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::with_spacing(dims, [1.0; 3]).expect("positive dims")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Voxel-to-world (mm) transform.
    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Same voxel lattice; affines may differ by rounding.
    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }

    pub fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}@{:?} vs {:?}@{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// World coordinates (mm) of a continuous voxel position.
    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.affine * Vector4::new(p[0], p[1], p[2], 1.0);
        [w[0], w[1], w[2]]
    }

    pub fn world_to_voxel_matrix(&self) -> Matrix4<f64> {
        self.affine.try_inverse().expect("affine checked nonsingular")
    }

    /// World-space centre of the voxel lattice.
    pub fn center_world(&self) -> [f64; 3] {
        let c = [
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ];
        self.voxel_to_world(c)
    }
}

/// Scalar field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at voxel {i}")));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![0.0; n],
        }
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        assert!(value.is_finite());
        let n = grid.len();
        Self {
            grid,
            data: vec![value; n],
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let [nx, ny, nz] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing()
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        self.grid.affine()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    /// New volume on the same grid with the given data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), data)
    }

    /// Applies `f` voxel-wise. `f` must map finite values to finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Trilinear sample at a continuous voxel coordinate, zero outside the grid.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        sample_trilinear(self, p)
    }

    /// Spatial gradient of the trilinear interpolant at `p` (per voxel index).
    #[inline]
    pub fn sample_with_gradient(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let cell = Cell::locate(p);
        cell.value_and_gradient(self.grid.dims(), &self.data)
    }

    /// Cubic-convolution sample (Keys, a = −0.5) and its gradient, zero
    /// padded. Unlike the trilinear interpolant it is C¹ in `p`.
    pub fn sample_cubic_with_gradient(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let [nx, ny, nz] = self.grid.dims();
        let mut w = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        let mut base = [0i64; 3];
        for a in 0..3 {
            let (b, t) = floor_split(p[a]);
            base[a] = b - 1;
            for k in 0..4 {
                let d = t + 1.0 - k as f64;
                let (v, g) = keys_kernel(d);
                w[a][k] = v;
                dw[a][k] = g;
            }
        }
        let inside = |v: i64, n: usize| v >= 0 && (v as usize) < n;
        let (mut acc, mut g) = (0.0, [0.0; 3]);
        for kz in 0..4 {
            let z = base[2] + kz as i64;
            if !inside(z, nz) {
                continue;
            }
            for ky in 0..4 {
                let y = base[1] + ky as i64;
                if !inside(y, ny) {
                    continue;
                }
                let row = (z as usize * ny + y as usize) * nx;
                for kx in 0..4 {
                    let x = base[0] + kx as i64;
                    if !inside(x, nx) {
                        continue;
                    }
                    let v = self.data[row + x as usize];
                    acc += w[0][kx] * w[1][ky] * w[2][kz] * v;
                    // d/dp of kernel(t + 1 − k) is +kernel'
                    g[0] += dw[0][kx] * w[1][ky] * w[2][kz] * v;
                    g[1] += w[0][kx] * dw[1][ky] * w[2][kz] * v;
                    g[2] += w[0][kx] * w[1][ky] * dw[2][kz] * v;
                }
            }
        }
        (acc, g)
    }

    /// Voxels with value > 0.5.
    pub fn count_above_half(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }
}

/// Trilinear interpolation with zero padding.
///
/// Each of the eight cell corners contributes its value when it lies inside
/// the grid and zero otherwise, so the interpolant decays linearly to zero
/// within one voxel of the border.
pub fn sample_trilinear(vol: &Volume3D, p: [f64; 3]) -> f64 {
    Cell::locate(p).value(vol.dims(), vol.data())
}

/// Integer floor and fractional part; avoids a libm call on targets
/// without a native rounding instruction.
#[inline(always)]
pub(crate) fn floor_split(v: f64) -> (i64, f64) {
    let t = v as i64;
    let t = if (t as f64) > v { t - 1 } else { t };
    (t, v - t as f64)
}

/// Keys cubic convolution kernel with a = −0.5 and its derivative.
#[inline]
fn keys_kernel(d: f64) -> (f64, f64) {
    let x = d.abs();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    if x < 1.0 {
        (1.5 * x * x * x - 2.5 * x * x + 1.0, sign * (4.5 * x * x - 5.0 * x))
    } else if x < 2.0 {
        (
            -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0,
            sign * (-1.5 * x * x + 5.0 * x - 4.0),
        )
    } else {
        (0.0, 0.0)
    }
}

/// Interpolation cell containing a continuous coordinate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub base: [i64; 3],
    pub frac: [f64; 3],
}

impl Cell {
    #[inline]
    pub fn locate(p: [f64; 3]) -> Self {
        let (bx, fx) = floor_split(p[0]);
        let (by, fy) = floor_split(p[1]);
        let (bz, fz) = floor_split(p[2]);
        Self {
            base: [bx, by, bz],
            frac: [fx, fy, fz],
        }
    }

    /// Calls `f(linear_index, weight, dweight/dp)` for every in-grid corner.
    #[inline]
    pub fn for_each_corner(&self, dims: [usize; 3], mut f: impl FnMut(usize, f64, [f64; 3])) {
        let [nx, ny, nz] = [dims[0] as i64, dims[1] as i64, dims[2] as i64];
        let [bx, by, bz] = self.base;
        if bx < -1 || by < -1 || bz < -1 || bx >= nx || by >= ny || bz >= nz {
            return;
        }
        let [tx, ty, tz] = self.frac;
        let wx = [1.0 - tx, tx];
        let wy = [1.0 - ty, ty];
        let wz = [1.0 - tz, tz];
        const SIGN: [f64; 2] = [-1.0, 1.0];
        if bx >= 0 && by >= 0 && bz >= 0 && bx + 1 < nx && by + 1 < ny && bz + 1 < nz {
            // interior cell: no per-corner bounds checks
            let base = ((bz * ny + by) * nx + bx) as usize;
            let (sx, sy) = (nx as usize, (nx * ny) as usize);
            for dz in 0..2 {
                for dy in 0..2 {
                    let row = base + dz * sy + dy * sx;
                    let wyz = wy[dy] * wz[dz];
                    let dyz = [SIGN[dy] * wz[dz], wy[dy] * SIGN[dz]];
                    for dx in 0..2 {
                        f(
                            row + dx,
                            wx[dx] * wyz,
                            [SIGN[dx] * wyz, wx[dx] * dyz[0], wx[dx] * dyz[1]],
                        );
                    }
                }
            }
            return;
        }
        for dz in 0..2 {
            let z = bz + dz as i64;
            if z < 0 || z >= nz {
                continue;
            }
            for dy in 0..2 {
                let y = by + dy as i64;
                if y < 0 || y >= ny {
                    continue;
                }
                let row = (x_free_index(y, z, nx, ny)) as i64;
                for dx in 0..2 {
                    let x = bx + dx as i64;
                    if x < 0 || x >= nx {
                        continue;
                    }
                    let w = wx[dx] * wy[dy] * wz[dz];
                    let dw = [
                        SIGN[dx] * wy[dy] * wz[dz],
                        wx[dx] * SIGN[dy] * wz[dz],
                        wx[dx] * wy[dy] * SIGN[dz],
                    ];
                    f((row + x) as usize, w, dw);
                }
            }
        }
    }

    #[inline]
    pub fn value(&self, dims: [usize; 3], data: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_corner(dims, |i, w, _| acc += w * data[i]);
        acc
    }

    #[inline]
    pub fn value_and_gradient(&self, dims: [usize; 3], data: &[f64]) -> (f64, [f64; 3]) {
        let mut acc = 0.0;
        let mut g = [0.0; 3];
        self.for_each_corner(dims, |i, w, dw| {
            let v = data[i];
            acc += w * v;
            g[0] += dw[0] * v;
            g[1] += dw[1] * v;
            g[2] += dw[2] * v;
        });
        (acc, g)
    }
}

#[inline]
fn x_free_index(y: i64, z: i64, nx: i64, ny: i64) -> i64 {
    nx * (y + ny * z)
}

/// Orientation-preserving 4×4 world transform (last row `0 0 0 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    matrix: Matrix4<f64>,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        let last = matrix.row(3);
        if (last[0], last[1], last[2], last[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::InvalidArgument(
                "affine last row must be (0, 0, 0, 1)".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn from_parts(linear: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&linear);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self { matrix }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::from(t))
    }

    /// Rotation by `angle_deg` about `axis` (0 = x, 1 = y, 2 = z) around `center`.
    pub fn rotation_about(axis: usize, angle_deg: f64, center: [f64; 3]) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let r = match axis {
            0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            _ => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        };
        let cv = Vector3::from(center);
        Self::from_parts(r, cv - r * cv)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn determinant(&self) -> f64 {
        self.linear().determinant()
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        [w[0], w[1], w[2]]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &AffineTransform) -> Self {
        Self {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        self.matrix.try_inverse().map(|matrix| Self { matrix })
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        rows
    }
}

/// Resamples `vol` onto `target`, where `world` maps target world
/// coordinates to source world coordinates. Trilinear, zero padded.
pub fn resample_affine(vol: &Volume3D, target: &Grid, world: &AffineTransform) -> Volume3D {
    let to_src = vol.grid().world_to_voxel_matrix() * world.matrix() * target.affine();
    let [nx, ny, nz] = target.dims();
    let mut data = Vec::with_capacity(target.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = to_src * Vector4::new(x as f64, y as f64, z as f64, 1.0);
                data.push(vol.sample([p[0], p[1], p[2]]));
            }
        }
    }
    Volume3D {
        grid: target.clone(),
        data,
    }
}

/// Grid covering the same field of view as `grid` at a new isotropic spacing.
pub fn regrid(grid: &Grid, spacing_mm: f64) -> Grid {
    let dims = grid.dims();
    let sp = grid.spacing();
    let new_dims: [usize; 3] =
        std::array::from_fn(|a| ((dims[a] as f64 * sp[a] / spacing_mm).round() as usize).max(1));
    // keep the field-of-view centre fixed
    let linear = grid.affine().fixed_view::<3, 3>(0, 0).into_owned();
    let mut scale = Matrix3::zeros();
    for a in 0..3 {
        scale[(a, a)] = spacing_mm / sp[a];
    }
    let new_linear = linear * scale;
    let c_old = Vector3::from(grid.center_world());
    let half_new = Vector3::from(std::array::from_fn::<f64, 3, _>(|a| {
        (new_dims[a] as f64 - 1.0) / 2.0
    }));
    let origin = c_old - new_linear * half_new;
    let mut affine = Matrix4::identity();
    affine.fixed_view_mut::<3, 3>(0, 0).copy_from(&new_linear);
    affine.fixed_view_mut::<3, 1>(0, 3).copy_from(&origin);
    Grid::new(new_dims, [spacing_mm; 3], affine).expect("derived grid valid")
}
