//! Percentile min-max scaling with a logarithmic upper tail.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const LOWER_PERCENTILE: f64 = 0.5;
pub const UPPER_PERCENTILE: f64 = 99.5;

/// Percentile `q` (0..=100) by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * (q / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maps an already min-max scaled value: clip below 0, identity on (0, 1],
/// `1 + log10(y)` above 1.
#[inline]
pub fn log_tail(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y <= 1.0 {
        y
    } else {
        1.0 + y.log10()
    }
}

/// Scales intensities so the 0.5th percentile maps to 0 and the 99.5th to 1;
/// values beyond the upper anchor are compressed logarithmically.
pub fn normalize_intensity(vol: &Volume3D) -> Result<Volume3D> {
    let mut sorted = vol.data().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile(&sorted, LOWER_PERCENTILE);
    let hi = percentile(&sorted, UPPER_PERCENTILE);
    if hi <= lo {
        return Err(Error::DegenerateIntensity(lo));
    }
    let scale = 1.0 / (hi - lo);
    vol.map(|x| log_tail((x - lo) * scale))
}
