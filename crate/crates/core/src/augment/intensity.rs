use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AugmentKind, AugmentSpec};
use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const DEFAULT_BIAS_ORDER: u32 = 4;

/// Nominal intensity range of normalized images; brightness shifts are
/// fractions of it.
const NOMINAL_RANGE: f64 = 1.0;

/// Brightness adds `magnitude` times the nominal range of 1; contrast
/// scales deviations from the mean by `1 + magnitude`.
pub fn apply_intensity(vol: &Volume3D, spec: &AugmentSpec) -> Result<Volume3D> {
    spec.expect(&[AugmentKind::Brightness, AugmentKind::Contrast], "apply_intensity")?;
    let m = spec.magnitude;
    if m == 0.0 {
        return Ok(vol.clone());
    }
    match spec.kind {
        AugmentKind::Brightness => vol.map(|v| v + m * NOMINAL_RANGE),
        _ => {
            let mean = vol.mean();
            vol.map(|v| mean + (v - mean) * (1.0 + m))
        }
    }
}

/// Exponent triples `(a, b, c)` with `a + b + c <= order`, in graded
/// lexicographic order.
pub fn monomial_exponents(order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for total in 0..=order {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

/// Multiplies by `exp(p(x))` for a seeded polynomial of the given order in
/// coordinates scaled to [-1, 1], renormalized so the field has mean 1.
/// Coefficients are uniform in `[-magnitude, magnitude]`.
pub fn bias_field(vol: &Volume3D, order: u32, magnitude: f64, seed: u64) -> Result<Volume3D> {
    if !magnitude.is_finite() || magnitude < 0.0 {
        return Err(Error::InvalidArgument(format!("bias magnitude {magnitude} must be finite and non-negative")));
    }
    if magnitude == 0.0 {
        return Ok(vol.clone());
    }
    let terms = monomial_exponents(order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = terms.iter().map(|_| rng.random_range(-magnitude..=magnitude)).collect();
    let dims = vol.dims();
    let axis: Vec<Vec<f64>> = dims
        .iter()
        .map(|&n| {
            (0..n)
                .map(|i| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let field = Volume3D::from_fn(vol.grid().clone(), |x, y, z| {
        let p = [axis[0][x], axis[1][y], axis[2][z]];
        let s: f64 = terms
            .iter()
            .zip(&coeffs)
            .map(|(e, c)| c * p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32))
            .sum();
        s.exp()
    })?;
    let mean = field.mean();
    let data = vol.data().iter().zip(field.data()).map(|(v, f)| v * f / mean).collect();
    vol.with_data(data)
}

/// `sqrt((v + n1)² + n2²)` with independent N(0, sigma²) draws per voxel.
pub fn rician_noise(vol: &Volume3D, sigma: f64, seed: u64) -> Result<Volume3D> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be positive")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = vol
        .data()
        .iter()
        .map(|&v| {
            let a = v + normal.sample(&mut rng);
            let b = normal.sample(&mut rng);
            a.hypot(b)
        })
        .collect();
    vol.with_data(data)
}
