//! Affine and diffeomorphic registration.

pub mod affine;
pub mod diffeo;
pub mod elasticity;
pub mod field;
pub mod loss;
pub mod optim;

pub use affine::{affine_register, affine_register_with, soft_dice_loss, AffineOptions, AffineResult, AffineStage};
pub use diffeo::{diffeo_register, diffeo_register_channels, DiffeoOptions, DiffeoReport, DiffeoResult, IterationRecord};
pub use elasticity::{linear_elasticity, linear_elasticity_with_gradient, ElasticityParams};
pub use field::{
    compose, full_deformations, jacobian_determinant, min_jacobian, random_smooth_field, shoot, warp, DisplacementField3D,
    ShootingConfig,
};
pub use loss::{
    mse_dissimilarity, supervised_velocity_jacobian_loss, supervised_velocity_loss, syn_loss, syn_loss_and_gradient,
    syn_loss_channels, SupervisedLossConfig, SynEvaluation, SynTerm, SynTerms,
};
pub use optim::DescentConfig;
