//! Continuous tissue maps (0 background, 1 CSF, 2 GM, 3 WM), their
//! decomposition into class probabilities, and overlap metrics.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const BACKGROUND: u8 = 0;
pub const CSF: u8 = 1;
pub const GM: u8 = 2;
pub const WM: u8 = 3;

const MIXTURE_TOL: f64 = 1e-6;

/// Tissue map with values in `[0, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMap {
    vol: Volume3D,
}

impl TissueMap {
    pub fn new(vol: Volume3D) -> Result<Self> {
        if let Some((index, &value)) = vol
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=3.0).contains(&v))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(Self { vol })
    }

    pub fn volume(&self) -> &Volume3D {
        &self.vol
    }

    pub fn into_volume(self) -> Volume3D {
        self.vol
    }

    /// Hard labels by rounding to the nearest class, ties rounding up.
    pub fn hard_labels(&self) -> Vec<u8> {
        self.vol
            .data()
            .iter()
            .map(|&t| (t + 0.5).floor().min(3.0) as u8)
            .collect()
    }
}

/// Per-class probabilities; background is `1 - csf - gm - wm`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    pub csf: Volume3D,
    pub gm: Volume3D,
    pub wm: Volume3D,
}

impl ProbabilityMaps {
    pub fn new(csf: Volume3D, gm: Volume3D, wm: Volume3D) -> Result<Self> {
        csf.grid().ensure_same(gm.grid(), "csf/gm")?;
        csf.grid().ensure_same(wm.grid(), "csf/wm")?;
        for i in 0..csf.len() {
            let (c, g, w) = (csf.data()[i], gm.data()[i], wm.data()[i]);
            let ok = [c, g, w].iter().all(|p| (-MIXTURE_TOL..=1.0 + MIXTURE_TOL).contains(p))
                && c + g + w <= 1.0 + MIXTURE_TOL;
            if !ok {
                return Err(Error::ValueOutOfRange {
                    index: i,
                    value: c + g + w,
                });
            }
        }
        Ok(Self { csf, gm, wm })
    }

    /// Per-voxel `csf + gm + wm`.
    pub fn tissue_sum(&self) -> Vec<f64> {
        (0..self.csf.len())
            .map(|i| self.csf.data()[i] + self.gm.data()[i] + self.wm.data()[i])
            .collect()
    }
}

/// Sharpness of the multi-level activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationParams {
    alpha: f64,
}

impl ActivationParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self { alpha })
        } else {
            Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Half-weight steps of the staircase above the unit step at 0.
pub const HALF_STEPS: [f64; 4] = [1.5, 2.0, 2.5, 3.0];

/// Staircase of sigmoids mapping logits onto tissue values in (0, 3):
/// a full step at 0 and half steps at 1.5, 2, 2.5 and 3.
pub fn multilevel_activation(x: f64, params: ActivationParams) -> f64 {
    let a = params.alpha;
    let mut y = sigmoid(a * x);
    for &c in &HALF_STEPS {
        y += 0.5 * sigmoid(a * (x - c));
    }
    y
}

/// `σ(p) − σ(q)` without cancellation when both lie on the same tail.
fn sigmoid_difference(p: f64, q: f64) -> f64 {
    if p >= 0.0 && q >= 0.0 {
        let (ep, eq) = ((-p).exp(), (-q).exp());
        -eq * (q - p).exp_m1() / ((1.0 + ep) * (1.0 + eq))
    } else if p <= 0.0 && q <= 0.0 {
        let (ep, eq) = (p.exp(), q.exp());
        eq * (p - q).exp_m1() / ((1.0 + ep) * (1.0 + eq))
    } else {
        sigmoid(p) - sigmoid(q)
    }
}

/// `multilevel_activation(x1) − multilevel_activation(x0)`, accurate even
/// on plateaus where both values round to the same float.
pub fn multilevel_activation_increment(x0: f64, x1: f64, params: ActivationParams) -> f64 {
    let a = params.alpha;
    let mut d = sigmoid_difference(a * x1, a * x0);
    for &c in &HALF_STEPS {
        d += 0.5 * sigmoid_difference(a * (x1 - c), a * (x0 - c));
    }
    d
}

/// Splits each tissue value linearly between its two neighbouring classes.
pub fn tissue_to_probabilities(map: &TissueMap) -> ProbabilityMaps {
    let vol = map.volume();
    let n = vol.len();
    let mut p = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, &t) in vol.data().iter().enumerate() {
        let k = t.floor().min(2.0);
        let frac = t - k;
        let k = k as usize;
        // classes 1..=3 live at p[0..3]; class 0 is background
        if k >= 1 {
            p[k - 1][i] = 1.0 - frac;
        }
        p[k][i] = frac;
    }
    let [csf, gm, wm] = p;
    ProbabilityMaps {
        csf: vol.with_data(csf).expect("finite"),
        gm: vol.with_data(gm).expect("finite"),
        wm: vol.with_data(wm).expect("finite"),
    }
}

/// `t = csf + 2 gm + 3 wm`, rejecting mixtures of non-adjacent classes.
pub fn probabilities_to_tissue(p: &ProbabilityMaps) -> Result<TissueMap> {
    p.csf.grid().ensure_same(p.gm.grid(), "csf/gm")?;
    p.csf.grid().ensure_same(p.wm.grid(), "csf/wm")?;
    let n = p.csf.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (c, g, w) = (p.csf.data()[i], p.gm.data()[i], p.wm.data()[i]);
        let bg = 1.0 - c - g - w;
        let present: Vec<usize> = [bg, c, g, w]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > MIXTURE_TOL)
            .map(|(k, _)| k)
            .collect();
        let adjacent = match present.as_slice() {
            [] | [_] => true,
            [a, b] => b - a == 1,
            _ => false,
        };
        if !adjacent {
            return Err(Error::NonAdjacentMixture { index: i });
        }
        out.push((c + 2.0 * g + 3.0 * w).clamp(0.0, 3.0));
    }
    TissueMap::new(p.csf.with_data(out)?)
}

/// Moves GM probability inside `mask` to CSF and WM in equal halves.
pub fn gm_mask_redistribute(p: &ProbabilityMaps, mask: &Volume3D) -> Result<ProbabilityMaps> {
    p.gm.grid().ensure_same(mask.grid(), "probabilities/mask")?;
    let mut csf = p.csf.data().to_vec();
    let mut gm = p.gm.data().to_vec();
    let mut wm = p.wm.data().to_vec();
    for (i, &m) in mask.data().iter().enumerate() {
        if m > 0.5 {
            let half = gm[i] / 2.0;
            csf[i] += half;
            wm[i] += half;
            gm[i] = 0.0;
        }
    }
    Ok(ProbabilityMaps {
        csf: p.csf.with_data(csf)?,
        gm: p.gm.with_data(gm)?,
        wm: p.wm.with_data(wm)?,
    })
}

/// Dice overlap `2|A∩B| / (|A| + |B|)` of one label; 1.0 when both are empty.
pub fn dice_labels(a: &[u8], b: &[u8], label: u8) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let ia = x == label;
        let ib = y == label;
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Dice score of `label` between two label volumes (values compared after
/// rounding to the nearest integer).
pub fn dice_score(a: &Volume3D, b: &Volume3D, label: u8) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "dice")?;
    let round = |v: &Volume3D| -> Vec<u8> {
        v.data()
            .iter()
            .map(|&x| (x + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    };
    Ok(dice_labels(&round(a), &round(b), label))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceSummary {
    pub csf: f64,
    pub gm: f64,
    pub wm: f64,
    /// Mean of the three tissue classes.
    pub foreground: f64,
    /// Mean of GM and WM.
    pub gwm_mean: f64,
}

impl DiceSummary {
    pub fn from_classes(csf: f64, gm: f64, wm: f64) -> Self {
        Self {
            csf,
            gm,
            wm,
            foreground: (csf + gm + wm) / 3.0,
            gwm_mean: (gm + wm) / 2.0,
        }
    }
}

pub fn dice_foreground(a: &TissueMap, b: &TissueMap) -> Result<DiceSummary> {
    a.volume().grid().ensure_same(b.volume().grid(), "dice")?;
    let la = a.hard_labels();
    let lb = b.hard_labels();
    Ok(DiceSummary::from_classes(
        dice_labels(&la, &lb, CSF),
        dice_labels(&la, &lb, GM),
        dice_labels(&la, &lb, WM),
    ))
}
