//! Numerical core of a VBM preprocessing pipeline.
//!
//! - [`volume`], [`nifti`], [`intensity`], [`smooth`]: volumes, file I/O,
//!   intensity normalization and FWHM smoothing
//! - [`tissue`]: 0–3 tissue maps, probability maps, GM masking, Dice
//! - [`patching`]: patch layout optimization and weighted accumulation
//! - [`registration`]: affine and stationary-velocity-field registration
//! - [`augment`]: seeded spatial, intensity and k-space augmentations
//! - [`vbm`]: voxel-wise GLM t-maps and resampling statistics
//! - [`pipeline`]: configuration, phantoms, evaluation and orchestration

pub mod augment;
pub mod error;
pub mod intensity;
pub mod nifti;
pub mod patching;
pub mod pipeline;
pub mod registration;
pub mod smooth;
pub mod tissue;
pub mod vbm;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{AffineTransform, Grid, Volume3D};
