//! Linear-elastic regularization energy of a displacement field.

use super::field::{DisplacementField3D, Vec3};
use crate::error::{Error, Result};
use crate::volume::Grid;

/// Lamé parameters and the weight of the regularizer in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityParams {
    pub mu: f64,
    pub lambda: f64,
    pub big_lambda: f64,
}

impl Default for ElasticityParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 0.5,
            big_lambda: 0.01,
        }
    }
}

impl ElasticityParams {
    pub fn new(mu: f64, lambda: f64, big_lambda: f64) -> Result<Self> {
        let p = Self { mu, lambda, big_lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.big_lambda.is_finite() && self.big_lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization weight must be >= 0, got {}",
                self.big_lambda
            )));
        }
        Ok(())
    }
}

/// Calls `f(i, stencils)` for every voxel, where `stencils[a]` holds the
/// `(lower, upper, scale)` of the central difference along axis `a`
/// (one-sided at the borders, zero scale on singleton axes).
#[inline]
pub(crate) fn for_each_stencil(grid: &Grid, mut f: impl FnMut(usize, &[(usize, usize, f64); 3])) {
    let dims = grid.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    // offsets below and above the voxel plus the scale, per axis position
    let offsets = |p: usize, a: usize| -> (usize, usize, f64) {
        let (n, s) = (dims[a], strides[a]);
        if n == 1 {
            (0, 0, 0.0)
        } else if p == 0 {
            (0, s, 1.0)
        } else if p == n - 1 {
            (s, 0, 1.0)
        } else {
            (s, s, 0.5)
        }
    };
    let mut i = 0;
    for z in 0..dims[2] {
        let oz = offsets(z, 2);
        for y in 0..dims[1] {
            let oy = offsets(y, 1);
            for x in 0..dims[0] {
                let ox = offsets(x, 0);
                let st = [
                    (i - ox.0, i + ox.1, ox.2),
                    (i - oy.0, i + oy.1, oy.2),
                    (i - oz.0, i + oz.1, oz.2),
                ];
                f(i, &st);
                i += 1;
            }
        }
    }
}

/// Physical-unit displacement gradient from a voxel's stencils.
#[inline(always)]
fn strain_source(u: &[Vec3], st: &[(usize, usize, f64); 3], ratio: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut d = [[0.0; 3]; 3];
    for (a, &(lo, hi, sc)) in st.iter().enumerate() {
        let (ul, uh) = (u[lo], u[hi]);
        for c in 0..3 {
            d[c][a] = (uh[c] - ul[c]) * sc * ratio[c][a];
        }
    }
    d
}

fn spacing_ratios(grid: &Grid) -> [[f64; 3]; 3] {
    let sp = grid.spacing();
    std::array::from_fn(|c| std::array::from_fn(|a| sp[c] / sp[a]))
}

#[inline(always)]
fn energy_density(d: &[[f64; 3]; 3], mu: f64, lambda: f64) -> (f64, f64) {
    let tr = d[0][0] + d[1][1] + d[2][2];
    let mut e2 = 0.0;
    for c in 0..3 {
        for a in 0..3 {
            let e = 0.5 * (d[c][a] + d[a][c]);
            e2 += e * e;
        }
    }
    (mu * e2 + 0.5 * lambda * tr * tr, tr)
}

/// `Σ vol · (μ‖ε‖² + λ/2 · tr(ε)²)` with `ε` the symmetric part of the
/// displacement gradient in millimetres.
pub fn linear_elasticity(phi: &DisplacementField3D, params: &ElasticityParams) -> f64 {
    let grid = phi.grid();
    let ratio = spacing_ratios(grid);
    let u = phi.data();
    let mut acc = 0.0;
    for_each_stencil(grid, |_, st| {
        acc += energy_density(&strain_source(u, st, &ratio), params.mu, params.lambda).0;
    });
    grid.voxel_volume() * acc
}

/// Energy and its gradient with respect to the voxel-unit displacements.
pub fn linear_elasticity_with_gradient(phi: &DisplacementField3D, params: &ElasticityParams) -> (f64, Vec<Vec3>) {
    let (mu, lambda) = (params.mu, params.lambda);
    let grid = phi.grid();
    let ratio = spacing_ratios(grid);
    let vol = grid.voxel_volume();
    let u = phi.data();
    let mut g = vec![[0.0; 3]; u.len()];
    let mut acc = 0.0;
    for_each_stencil(grid, |_, st| {
        let d = strain_source(u, st, &ratio);
        let (w, tr) = energy_density(&d, mu, lambda);
        acc += w;
        // stress contracted with the transposed difference stencil
        for (a, &(lo, hi, sc)) in st.iter().enumerate() {
            if sc == 0.0 {
                continue;
            }
            for c in 0..3 {
                let e = 0.5 * (d[c][a] + d[a][c]);
                let stress = 2.0 * mu * e + if c == a { lambda * tr } else { 0.0 };
                let v = vol * stress * sc * ratio[c][a];
                g[hi][c] += v;
                g[lo][c] -= v;
            }
        }
    });
    (vol * acc, g)
}
