//! Seeded augmentations: spatial resampling, intensity changes, bias
//! fields, Rician noise and k-space artifacts.
//!
//! Every transform is a pure function of `(volume, kind, magnitude, seed)`
//! and keeps the volume geometry. A magnitude of zero is the identity for
//! every kind except [`AugmentKind::Flip`], which has no magnitude, and
//! [`AugmentKind::Zoom`], whose magnitude is the zoom factor (identity at 1).

mod intensity;
mod kspace;
mod spatial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub use intensity::{apply_intensity, bias_field, monomial_exponents, rician_noise, DEFAULT_BIAS_ORDER};
pub use kspace::{fft3, kspace_artifact, GHOST_SPACING, MOTION_COPIES};
pub use spatial::{apply_spatial, downsample_blur};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Flip,
    Rotate,
    Zoom,
    Warp,
    Brightness,
    Contrast,
    BiasField,
    Motion,
    NoiseRician,
    Blur,
    Ghosting,
    Spike,
    Downsample,
    Gibbs,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 14] = [
        AugmentKind::Flip,
        AugmentKind::Rotate,
        AugmentKind::Zoom,
        AugmentKind::Warp,
        AugmentKind::Brightness,
        AugmentKind::Contrast,
        AugmentKind::BiasField,
        AugmentKind::Motion,
        AugmentKind::NoiseRician,
        AugmentKind::Blur,
        AugmentKind::Ghosting,
        AugmentKind::Spike,
        AugmentKind::Downsample,
        AugmentKind::Gibbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Flip => "flip",
            AugmentKind::Rotate => "rotate",
            AugmentKind::Zoom => "zoom",
            AugmentKind::Warp => "warp",
            AugmentKind::Brightness => "brightness",
            AugmentKind::Contrast => "contrast",
            AugmentKind::BiasField => "bias_field",
            AugmentKind::Motion => "motion",
            AugmentKind::NoiseRician => "noise_rician",
            AugmentKind::Blur => "blur",
            AugmentKind::Ghosting => "ghosting",
            AugmentKind::Spike => "spike",
            AugmentKind::Downsample => "downsample",
            AugmentKind::Gibbs => "gibbs",
        }
    }

    /// Documented magnitude range, as shown in error messages.
    pub fn allowed(self) -> &'static str {
        match self {
            AugmentKind::Flip => "any (ignored)",
            AugmentKind::Rotate => "[-15, 15] degrees",
            AugmentKind::Zoom => "[0.9, 1.1] (zoom factor)",
            AugmentKind::Warp => "[0, 0.1] of the extent",
            AugmentKind::Brightness | AugmentKind::Contrast => "[-0.5, 0.5]",
            AugmentKind::BiasField => "[0, 1]",
            AugmentKind::NoiseRician => "[0, 1] (noise sigma)",
            AugmentKind::Blur => "[0, 8] mm FWHM",
            AugmentKind::Downsample => "0 or a factor in {2, 3, 4}",
            AugmentKind::Motion | AugmentKind::Ghosting | AugmentKind::Spike => "[0, 1]",
            AugmentKind::Gibbs => "[0, 1)",
        }
    }

    fn accepts(self, m: f64) -> bool {
        if !m.is_finite() {
            return false;
        }
        match self {
            AugmentKind::Flip => true,
            AugmentKind::Rotate => m.abs() <= 15.0,
            AugmentKind::Zoom => (0.9..=1.1).contains(&m),
            AugmentKind::Warp => (0.0..=0.1).contains(&m),
            AugmentKind::Brightness | AugmentKind::Contrast => m.abs() <= 0.5,
            AugmentKind::BiasField | AugmentKind::NoiseRician => (0.0..=1.0).contains(&m),
            AugmentKind::Blur => (0.0..=8.0).contains(&m),
            AugmentKind::Downsample => [0.0, 2.0, 3.0, 4.0].contains(&m),
            AugmentKind::Motion | AugmentKind::Ghosting | AugmentKind::Spike => (0.0..=1.0).contains(&m),
            AugmentKind::Gibbs => (0.0..1.0).contains(&m),
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentSpec {
    pub fn new(kind: AugmentKind, magnitude: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, magnitude, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.accepts(self.magnitude) {
            Ok(())
        } else {
            Err(Error::MagnitudeOutOfRange {
                kind: self.kind.name(),
                magnitude: self.magnitude,
                allowed: self.kind.allowed(),
            })
        }
    }

    fn expect(&self, kinds: &[AugmentKind], op: &str) -> Result<()> {
        self.validate()?;
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{op} does not handle '{}'", self.kind)))
        }
    }
}

/// Applies any augmentation.
pub fn apply(vol: &Volume3D, spec: &AugmentSpec) -> Result<Volume3D> {
    use AugmentKind::*;
    match spec.kind {
        Flip | Rotate | Zoom | Warp => apply_spatial(vol, spec),
        Brightness | Contrast => apply_intensity(vol, spec),
        BiasField => {
            spec.validate()?;
            bias_field(vol, DEFAULT_BIAS_ORDER, spec.magnitude, spec.seed)
        }
        NoiseRician => {
            spec.validate()?;
            if spec.magnitude == 0.0 {
                Ok(vol.clone())
            } else {
                rician_noise(vol, spec.magnitude, spec.seed)
            }
        }
        Motion | Ghosting | Spike | Gibbs => kspace_artifact(vol, spec),
        Downsample | Blur => downsample_blur(vol, spec),
    }
}

/// Applies a chain of augmentations in order.
pub fn apply_all(vol: &Volume3D, specs: &[AugmentSpec]) -> Result<Volume3D> {
    specs.iter().try_fold(vol.clone(), |v, s| apply(&v, s))
}
