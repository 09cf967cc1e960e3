use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AugmentKind, AugmentSpec};
use crate::error::Result;
use crate::volume::Volume3D;

/// Every `GHOST_SPACING`-th k-space plane is attenuated by ghosting.
pub const GHOST_SPACING: i64 = 4;
/// Number of shifted copies averaged by the motion artifact.
pub const MOTION_COPIES: usize = 3;
const MAX_MOTION_SHIFT: f64 = 2.0;

/// In-place 3-D DFT over x-fastest data. The inverse is scaled by `1/N`.
pub fn fft3(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    assert_eq!(data.len(), dims.iter().product::<usize>(), "buffer does not match dims");
    let mut planner = FftPlanner::<f64>::new();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        if n < 2 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = strides[axis];
        let mut line = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for j in 0..dims[others[1]] {
            for i in 0..dims[others[0]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                for (k, c) in line.iter_mut().enumerate() {
                    *c = data[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, c) in line.iter().enumerate() {
                    data[base + k * stride] = *c;
                }
            }
        }
    }
    if inverse {
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

fn signed_freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Motion, ghosting, spike or Gibbs ringing through the 3-D spectrum.
///
/// - ghosting scales planes whose signed frequency on axis `seed % 3` is a
///   non-zero multiple of [`GHOST_SPACING`] by `1 - magnitude`
/// - spike adds `magnitude · max(max|K|, N)` at one seeded non-DC
///   coefficient, so a zero volume becomes a cosine of amplitude `magnitude`
/// - Gibbs zeroes frequencies beyond `(1 - magnitude)` of Nyquist on any axis
/// - motion averages [`MOTION_COPIES`] seeded translations of up to
///   `2 · magnitude` voxels per axis as phase ramps
///
/// The result is the real part, except for motion which returns the modulus.
pub fn kspace_artifact(vol: &Volume3D, spec: &AugmentSpec) -> Result<Volume3D> {
    use AugmentKind::*;
    spec.expect(&[Motion, Ghosting, Spike, Gibbs], "kspace_artifact")?;
    let m = spec.magnitude;
    if m == 0.0 {
        return Ok(vol.clone());
    }
    let dims = vol.dims();
    let mut k: Vec<Complex64> = vol.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3(&mut k, dims, false);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let freq = |idx: usize| {
        let [x, y, z] = vol.grid().coords(idx);
        [signed_freq(x, dims[0]), signed_freq(y, dims[1]), signed_freq(z, dims[2])]
    };
    match spec.kind {
        Ghosting => {
            let axis = (spec.seed % 3) as usize;
            for (idx, c) in k.iter_mut().enumerate() {
                let f = freq(idx)[axis];
                if f != 0 && f % GHOST_SPACING == 0 {
                    *c *= 1.0 - m;
                }
            }
        }
        Spike => {
            let peak = k.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let amplitude = m * peak.max(k.len() as f64);
            let idx = if k.len() > 1 { rng.random_range(1..k.len()) } else { 0 };
            k[idx] += amplitude;
        }
        Gibbs => {
            let limit: [f64; 3] = dims.map(|n| (1.0 - m) * n as f64 / 2.0);
            for (idx, c) in k.iter_mut().enumerate() {
                let f = freq(idx);
                if (0..3).any(|a| f[a].abs() as f64 > limit[a]) {
                    *c = Complex64::default();
                }
            }
        }
        Motion => {
            let shifts: Vec<[f64; 3]> = (0..MOTION_COPIES)
                .map(|_| {
                    std::array::from_fn(|_| rng.random_range(-1.0..=1.0) * MAX_MOTION_SHIFT * m)
                })
                .collect();
            for (idx, c) in k.iter_mut().enumerate() {
                let f = freq(idx);
                let phase: Complex64 = shifts
                    .iter()
                    .map(|s| {
                        let arg: f64 = (0..3).map(|a| -std::f64::consts::TAU * f[a] as f64 * s[a] / dims[a] as f64).sum();
                        Complex64::from_polar(1.0, arg)
                    })
                    .sum::<Complex64>()
                    / MOTION_COPIES as f64;
                *c *= phase;
            }
        }
        _ => unreachable!(),
    }
    fft3(&mut k, dims, true);
    let data = if spec.kind == Motion {
        k.iter().map(|c| c.norm()).collect()
    } else {
        k.iter().map(|c| c.re).collect()
    };
    vol.with_data(data)
}
