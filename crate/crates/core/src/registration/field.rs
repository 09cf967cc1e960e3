//! Displacement fields and the operations of a stationary-velocity-field
//! registration: scaling-and-squaring, composition, warping and Jacobians.
//!
//! A field stores `u(x)` in voxel units and represents the map
//! `x ↦ x + u(x)`; the zero field is the identity. Each differentiable
//! operation has a matching `*_adjoint` that propagates an upstream
//! gradient back to its inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::elasticity::for_each_stencil;
use crate::error::{Error, Result};
use crate::volume::{floor_split, Cell, Grid, Volume3D};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField3D {
    grid: Grid,
    u: Vec<Vec3>,
}

/// Scaling-and-squaring settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingConfig {
    tau: u32,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self { tau: 7 }
    }
}

impl ShootingConfig {
    pub fn new(tau: u32) -> Result<Self> {
        if tau == 0 || tau > 30 {
            return Err(Error::InvalidArgument(format!("tau must be in 1..=30, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }
}

impl DisplacementField3D {
    pub fn new(grid: Grid, u: Vec<Vec3>) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "field length {} does not match dims {:?}",
                u.len(),
                grid.dims()
            )));
        }
        if u.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidVolume("non-finite displacement".into()));
        }
        Ok(Self { grid, u })
    }

    pub fn identity(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            u: vec![[0.0; 3]; n],
        }
    }

    pub fn constant(grid: Grid, c: Vec3) -> Self {
        let n = grid.len();
        Self {
            grid,
            u: vec![c; n],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> Vec3) -> Result<Self> {
        let [nx, ny, nz] = grid.dims();
        let mut u = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    u.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, u)
    }

    /// Builds from three component volumes.
    pub fn from_components(components: [&Volume3D; 3]) -> Result<Self> {
        let grid = components[0].grid().clone();
        for c in &components[1..] {
            grid.ensure_same(c.grid(), "field components")?;
        }
        let u = (0..grid.len())
            .map(|i| [components[0].data()[i], components[1].data()[i], components[2].data()[i]])
            .collect();
        Self::new(grid, u)
    }

    pub fn components(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| self.u.iter().map(|v| v[c]).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    pub fn data(&self) -> &[Vec3] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.u[self.grid.index(x, y, z)]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            u: self.u.iter().map(|v| [v[0] * s, v[1] * s, v[2] * s]).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Largest displacement norm.
    pub fn max_norm(&self) -> f64 {
        self.u
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute displacement component.
    pub fn max_abs(&self) -> f64 {
        self.u.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Flattened components (`u.len() * 3` values).
    pub fn to_flat(&self) -> Vec<f64> {
        self.u.iter().flatten().copied().collect()
    }

    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        if flat.len() != grid.len() * 3 {
            return Err(Error::InvalidVolume("flat field length".into()));
        }
        Self::new(grid, flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    #[inline]
    pub fn sample(&self, p: Vec3) -> Vec3 {
        sample_vec(self.grid.dims(), &self.u, p)
    }
}

#[inline]
fn sample_vec(dims: [usize; 3], u: &[Vec3], p: Vec3) -> Vec3 {
    let mut acc = [0.0; 3];
    Cell::locate(p).for_each_corner(dims, |i, w, _| {
        let v = u[i];
        acc[0] += w * v[0];
        acc[1] += w * v[1];
        acc[2] += w * v[2];
    });
    acc
}

#[inline]
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Calls `f(index, position)` for every voxel, with position `x + u(x)`.
#[inline]
fn for_each_displaced(grid: &Grid, u: &[Vec3], mut f: impl FnMut(usize, Vec3)) {
    let [nx, ny, nz] = grid.dims();
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = u[i];
                f(i, [x as f64 + d[0], y as f64 + d[1], z as f64 + d[2]]);
                i += 1;
            }
        }
    }
}

/// Interior interpolation cell: linear index of the lower corner and the
/// fractional offsets, or `None` when any corner falls outside the grid.
#[inline(always)]
fn interior_cell(p: Vec3, dims: [usize; 3]) -> Option<(usize, Vec3)> {
    let (bx, tx) = floor_split(p[0]);
    let (by, ty) = floor_split(p[1]);
    let (bz, tz) = floor_split(p[2]);
    let (nx, ny, nz) = (dims[0] as i64, dims[1] as i64, dims[2] as i64);
    if bx < 0 || by < 0 || bz < 0 || bx + 1 >= nx || by + 1 >= ny || bz + 1 >= nz {
        return None;
    }
    Some((((bz * ny + by) * nx + bx) as usize, [tx, ty, tz]))
}

/// Offsets of the eight cell corners, x fastest.
#[inline(always)]
fn corner_offsets(dims: [usize; 3]) -> [usize; 8] {
    let (sx, sy) = (dims[0], dims[0] * dims[1]);
    [0, 1, sx, sx + 1, sy, sy + 1, sy + sx, sy + sx + 1]
}

#[inline(always)]
fn corner_weights(t: Vec3) -> [f64; 8] {
    let (ux, uy, uz) = (1.0 - t[0], 1.0 - t[1], 1.0 - t[2]);
    let (a, b, c, d) = (ux * uy, t[0] * uy, ux * t[1], t[0] * t[1]);
    [a * uz, b * uz, c * uz, d * uz, a * t[2], b * t[2], c * t[2], d * t[2]]
}

/// Spatial gradient of the trilinear interpolant of eight corner scalars.
#[inline(always)]
fn corner_gradient(s: &[f64; 8], t: Vec3) -> Vec3 {
    let (ux, uy, uz) = (1.0 - t[0], 1.0 - t[1], 1.0 - t[2]);
    let dx = ((s[1] - s[0]) * uy + (s[3] - s[2]) * t[1]) * uz + ((s[5] - s[4]) * uy + (s[7] - s[6]) * t[1]) * t[2];
    let dy = ((s[2] - s[0]) * ux + (s[3] - s[1]) * t[0]) * uz + ((s[6] - s[4]) * ux + (s[7] - s[5]) * t[0]) * t[2];
    let dz = ((s[4] - s[0]) * ux + (s[5] - s[1]) * t[0]) * uy + ((s[6] - s[2]) * ux + (s[7] - s[3]) * t[0]) * t[1];
    [dx, dy, dz]
}

#[inline(always)]
fn sample_vec_fast(dims: [usize; 3], off: &[usize; 8], u: &[Vec3], p: Vec3) -> Vec3 {
    match interior_cell(p, dims) {
        Some((base, t)) => {
            let c = &u[base..=base + off[7]];
            let w = corner_weights(t);
            let mut acc = [0.0; 3];
            for k in 0..8 {
                let v = c[off[k]];
                acc[0] += w[k] * v[0];
                acc[1] += w[k] * v[1];
                acc[2] += w[k] * v[2];
            }
            acc
        }
        None => sample_vec(dims, u, p),
    }
}

#[inline(always)]
fn sample_scalar_fast(dims: [usize; 3], off: &[usize; 8], data: &[f64], p: Vec3) -> f64 {
    match interior_cell(p, dims) {
        Some((base, t)) => {
            let c = &data[base..=base + off[7]];
            let w = corner_weights(t);
            let mut acc = 0.0;
            for k in 0..8 {
                acc += w[k] * c[off[k]];
            }
            acc
        }
        None => Cell::locate(p).value(dims, data),
    }
}

#[inline(always)]
fn scalar_gradient_fast(dims: [usize; 3], off: &[usize; 8], data: &[f64], p: Vec3) -> Vec3 {
    match interior_cell(p, dims) {
        Some((base, t)) => {
            let c = &data[base..=base + off[7]];
            let s: [f64; 8] = std::array::from_fn(|k| c[off[k]]);
            corner_gradient(&s, t)
        }
        None => Cell::locate(p).value_and_gradient(dims, data).1,
    }
}

/// `(a ∘ b)(x) = a(x + u_b(x)) + u_b(x)`: apply `b`, then `a`.
pub fn compose(a: &DisplacementField3D, b: &DisplacementField3D) -> Result<DisplacementField3D> {
    a.grid.ensure_same(&b.grid, "compose")?;
    Ok(compose_unchecked(a, b))
}

fn compose_unchecked(a: &DisplacementField3D, b: &DisplacementField3D) -> DisplacementField3D {
    let dims = a.grid.dims();
    let off = corner_offsets(dims);
    let mut out = Vec::with_capacity(a.u.len());
    for_each_displaced(&b.grid, &b.u, |i, p| {
        out.push(add(sample_vec_fast(dims, &off, &a.u, p), b.u[i]));
    });
    DisplacementField3D {
        grid: a.grid.clone(),
        u: out,
    }
}

/// Back-propagates `g_out` through `compose(a, b)`, accumulating into
/// `g_a` and `g_b`.
pub fn compose_adjoint(
    a: &DisplacementField3D,
    b: &DisplacementField3D,
    g_out: &[Vec3],
    g_a: &mut [Vec3],
    g_b: &mut [Vec3],
) {
    let dims = a.grid.dims();
    for_each_displaced(&b.grid, &b.u, |i, p| {
        let g = g_out[i];
        let mut gb = g;
        Cell::locate(p).for_each_corner(dims, |k, w, dw| {
            let ak = a.u[k];
            let ga = &mut g_a[k];
            ga[0] += w * g[0];
            ga[1] += w * g[1];
            ga[2] += w * g[2];
            let s = ak[0] * g[0] + ak[1] * g[1] + ak[2] * g[2];
            gb[0] += dw[0] * s;
            gb[1] += dw[1] * s;
            gb[2] += dw[2] * s;
        });
        let t = &mut g_b[i];
        t[0] += gb[0];
        t[1] += gb[1];
        t[2] += gb[2];
    });
}

/// Adjoint of `compose(u, u)` with respect to `u`.
fn self_compose_adjoint(u: &DisplacementField3D, g_out: &[Vec3]) -> Vec<Vec3> {
    let mut g = vec![[0.0; 3]; u.u.len()];
    let dims = u.grid.dims();
    let off = corner_offsets(dims);
    for_each_displaced(&u.grid, &u.u, |i, p| {
        let go = g_out[i];
        let mut gb = go;
        match interior_cell(p, dims) {
            Some((base, t)) => {
                let w = corner_weights(t);
                let mut s = [0.0; 8];
                let cu = &u.u[base..=base + off[7]];
                let cg = &mut g[base..=base + off[7]];
                for k in 0..8 {
                    let ak = cu[off[k]];
                    s[k] = ak[0] * go[0] + ak[1] * go[1] + ak[2] * go[2];
                    let gk = &mut cg[off[k]];
                    gk[0] += w[k] * go[0];
                    gk[1] += w[k] * go[1];
                    gk[2] += w[k] * go[2];
                }
                let d = corner_gradient(&s, t);
                gb[0] += d[0];
                gb[1] += d[1];
                gb[2] += d[2];
            }
            None => {
                Cell::locate(p).for_each_corner(dims, |k, w, dw| {
                    let ak = u.u[k];
                    let gk = &mut g[k];
                    gk[0] += w * go[0];
                    gk[1] += w * go[1];
                    gk[2] += w * go[2];
                    let s = ak[0] * go[0] + ak[1] * go[1] + ak[2] * go[2];
                    gb[0] += dw[0] * s;
                    gb[1] += dw[1] * s;
                    gb[2] += dw[2] * s;
                });
            }
        }
        let t = &mut g[i];
        t[0] += gb[0];
        t[1] += gb[1];
        t[2] += gb[2];
    });
    g
}

/// Intermediate fields of one scaling-and-squaring run.
#[derive(Debug, Clone)]
pub struct ShootTape {
    /// Input of each squaring; `levels[0] = v / 2^τ`.
    levels: Vec<DisplacementField3D>,
    scale: f64,
}

/// Integrates a stationary velocity field by scaling and squaring:
/// `Φ₀ = id + v / 2^τ`, then `τ` self-compositions.
pub fn shoot(v: &DisplacementField3D, cfg: ShootingConfig) -> DisplacementField3D {
    let scale = 0.5f64.powi(cfg.tau as i32);
    let mut phi = v.scaled(scale);
    for _ in 0..cfg.tau {
        phi = compose_unchecked(&phi, &phi);
    }
    phi
}

/// [`shoot`] keeping the intermediate fields needed by [`shoot_adjoint`].
pub fn shoot_recorded(v: &DisplacementField3D, cfg: ShootingConfig) -> (DisplacementField3D, ShootTape) {
    let scale = 0.5f64.powi(cfg.tau as i32);
    let mut levels = Vec::with_capacity(cfg.tau as usize);
    let mut phi = v.scaled(scale);
    for _ in 0..cfg.tau {
        let next = compose_unchecked(&phi, &phi);
        levels.push(phi);
        phi = next;
    }
    (phi, ShootTape { levels, scale })
}

/// Gradient with respect to the velocity given the gradient of the shot field.
pub fn shoot_adjoint(tape: &ShootTape, g_out: &[Vec3]) -> Vec<Vec3> {
    let mut g = g_out.to_vec();
    for level in tape.levels.iter().rev() {
        g = self_compose_adjoint(level, &g);
    }
    for v in &mut g {
        v[0] *= tape.scale;
        v[1] *= tape.scale;
        v[2] *= tape.scale;
    }
    g
}

/// Full forward and backward deformations from the two half velocities:
/// `forward = Φ½ ∘ (Φ-½)⁻¹`, `backward = Φ-½ ∘ (Φ½)⁻¹`, where inverses are
/// shot from negated velocities.
pub fn full_deformations(
    v_half_fwd: &DisplacementField3D,
    v_half_bwd: &DisplacementField3D,
    cfg: ShootingConfig,
) -> Result<(DisplacementField3D, DisplacementField3D)> {
    v_half_fwd.grid.ensure_same(&v_half_bwd.grid, "half velocities")?;
    let f = shoot(v_half_fwd, cfg);
    let b = shoot(v_half_bwd, cfg);
    let f_inv = shoot(&v_half_fwd.negated(), cfg);
    let b_inv = shoot(&v_half_bwd.negated(), cfg);
    Ok((compose_unchecked(&f, &b_inv), compose_unchecked(&b, &f_inv)))
}

/// Pulls `vol` back through the field: `out(x) = vol(x + u(x))`.
pub fn warp(vol: &Volume3D, phi: &DisplacementField3D) -> Result<Volume3D> {
    vol.grid().ensure_same(&phi.grid, "warp")?;
    Ok(warp_unchecked(vol, phi))
}

pub(crate) fn warp_unchecked(vol: &Volume3D, phi: &DisplacementField3D) -> Volume3D {
    let dims = vol.dims();
    let off = corner_offsets(dims);
    let data = vol.data();
    let mut out = Vec::with_capacity(vol.len());
    for_each_displaced(&phi.grid, &phi.u, |_, p| {
        out.push(sample_scalar_fast(dims, &off, data, p));
    });
    vol.with_data(out).expect("interpolation of finite data")
}

/// Accumulates `∂/∂u` of `Σ g_out · warp(vol, phi)` into `g_phi`.
pub fn warp_adjoint(vol: &Volume3D, phi: &DisplacementField3D, g_out: &[f64], g_phi: &mut [Vec3]) {
    let dims = vol.dims();
    let off = corner_offsets(dims);
    let data = vol.data();
    for_each_displaced(&phi.grid, &phi.u, |i, p| {
        let g = g_out[i];
        if g == 0.0 {
            return;
        }
        let grad = scalar_gradient_fast(dims, &off, data, p);
        let t = &mut g_phi[i];
        t[0] += g * grad[0];
        t[1] += g * grad[1];
        t[2] += g * grad[2];
    });
}

#[inline]
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Per-voxel determinant of the Jacobian of `x ↦ x + u(x)`.
pub fn jacobian_determinant(phi: &DisplacementField3D) -> Volume3D {
    let u = &phi.u;
    let mut data = Vec::with_capacity(u.len());
    for_each_stencil(&phi.grid, |_, st| {
        let mut m = [[0.0; 3]; 3];
        for (a, &(lo, hi, sc)) in st.iter().enumerate() {
            let (ul, uh) = (u[lo], u[hi]);
            for c in 0..3 {
                m[c][a] = (uh[c] - ul[c]) * sc;
            }
            m[a][a] += 1.0;
        }
        data.push(det3(&m));
    });
    Volume3D::new(phi.grid.clone(), data).expect("finite field has finite Jacobian")
}

/// Smallest Jacobian determinant of the field.
pub fn min_jacobian(phi: &DisplacementField3D) -> f64 {
    let u = &phi.u;
    let mut min = f64::INFINITY;
    for_each_stencil(&phi.grid, |_, st| {
        let mut m = [[0.0; 3]; 3];
        for (a, &(lo, hi, sc)) in st.iter().enumerate() {
            let (ul, uh) = (u[lo], u[hi]);
            for c in 0..3 {
                m[c][a] = (uh[c] - ul[c]) * sc;
            }
            m[a][a] += 1.0;
        }
        min = min.min(det3(&m));
    });
    min
}

/// Smooth seeded random field for tests and phantoms.
///
/// White noise is smoothed with a Gaussian of `sigma_vox`, multiplied by a
/// window that vanishes at the border, and rescaled so the largest
/// displacement norm equals `max_norm`.
pub fn random_smooth_field(grid: &Grid, seed: u64, sigma_vox: f64, max_norm: f64) -> DisplacementField3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = grid.dims();
    let comps: [Volume3D; 3] = std::array::from_fn(|_| {
        let noise: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = Volume3D::new(Grid::unit(dims), noise).expect("finite noise");
        crate::smooth::gaussian_smooth(&v, sigma_vox * (8.0 * std::f64::consts::LN_2).sqrt())
    });
    let window = |p: usize, n: usize| -> f64 {
        if n < 3 {
            return 1.0;
        }
        let t = p as f64 / (n as f64 - 1.0);
        (std::f64::consts::PI * t).sin().powi(2)
    };
    let mut field = DisplacementField3D::from_fn(grid.clone(), |x, y, z| {
        let w = window(x, dims[0]) * window(y, dims[1]) * window(z, dims[2]);
        let i = grid.index(x, y, z);
        [comps[0].data()[i] * w, comps[1].data()[i] * w, comps[2].data()[i] * w]
    })
    .expect("finite");
    let m = field.max_norm();
    if m > 0.0 {
        field = field.scaled(max_norm / m);
    }
    field
}
