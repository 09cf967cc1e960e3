//! Twelve-parameter affine registration on a coarse-to-fine schedule.

use nalgebra::{Matrix3, Vector3};

use super::optim::{minimize, DescentConfig, StepRecord};
use crate::error::{Error, Result};
use crate::smooth::gaussian_smooth;
use crate::volume::{regrid, AffineTransform, Volume3D};

const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineStage {
    pub spacing_mm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineOptions {
    pub stages: Vec<AffineStage>,
    pub descent: DescentConfig,
}

impl Default for AffineOptions {
    fn default() -> Self {
        Self {
            stages: vec![
                AffineStage {
                    spacing_mm: 12.0,
                    iterations: 500,
                },
                AffineStage {
                    spacing_mm: 6.0,
                    iterations: 100,
                },
            ],
            descent: DescentConfig {
                momentum: 0.9,
                initial_step: 0.02,
                min_step_ratio: 1e-6,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineResult {
    /// Maps template world coordinates to image world coordinates.
    pub transform: AffineTransform,
    /// Loss trace per stage, initial value first.
    pub losses: Vec<Vec<f64>>,
}

/// Soft Dice loss `1 − 2Σab / (Σa + Σb + ε)`.
pub fn soft_dice_loss(a: &[f64], b: &[f64]) -> f64 {
    let p: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    1.0 - 2.0 * p / (s + DICE_EPS)
}

/// Registers with the default two-stage schedule and returns the
/// template-to-image world transform.
pub fn affine_register(
    img: &Volume3D,
    tmpl: &Volume3D,
    img_mask: &Volume3D,
    tmpl_mask: &Volume3D,
) -> Result<AffineTransform> {
    Ok(affine_register_with(img, tmpl, img_mask, tmpl_mask, &AffineOptions::default())?.transform)
}

/// Normalized template coordinates: centred on the field of view and
/// scaled by its largest half extent so all parameters share one scale.
struct Frame {
    center: Vector3<f64>,
    scale: f64,
}

impl Frame {
    fn transform(&self, theta: &[f64]) -> AffineTransform {
        let a = Matrix3::from_row_slice(&theta[..9]) + Matrix3::identity();
        let t = Vector3::new(theta[9], theta[10], theta[11]);
        let translation = self.center - a * self.center + self.scale * t;
        AffineTransform::from_parts(a, translation)
    }
}

/// Each stage smooths images and masks with a Gaussian whose FWHM equals
/// the stage spacing and evaluates MSE plus soft Dice on a template grid of
/// that spacing. Samples use cubic convolution so the loss is C¹ in the
/// parameters.
pub fn affine_register_with(
    img: &Volume3D,
    tmpl: &Volume3D,
    img_mask: &Volume3D,
    tmpl_mask: &Volume3D,
    opts: &AffineOptions,
) -> Result<AffineResult> {
    img.grid().ensure_same(img_mask.grid(), "image mask")?;
    tmpl.grid().ensure_same(tmpl_mask.grid(), "template mask")?;
    if img_mask.count_above_half() == 0 {
        return Err(Error::EmptyMask("image mask"));
    }
    if tmpl_mask.count_above_half() == 0 {
        return Err(Error::EmptyMask("template mask"));
    }
    let tg = tmpl.grid();
    let extent = (0..3)
        .map(|a| tg.dims()[a] as f64 * tg.spacing()[a] / 2.0)
        .fold(0.0, f64::max);
    let frame = Frame {
        center: Vector3::from(tg.center_world()),
        scale: extent,
    };
    let mut theta = vec![0.0; 12];
    let mut losses = Vec::new();
    for stage in &opts.stages {
        let (t, trace) = run_stage(img, tmpl, img_mask, tmpl_mask, &frame, theta, stage, &opts.descent)?;
        theta = t;
        losses.push(trace);
    }
    let transform = frame.transform(&theta);
    let det = transform.determinant();
    if !(det > 0.0) {
        return Err(Error::JacobianFoldover { min_jacobian: det });
    }
    Ok(AffineResult { transform, losses })
}

/// Loss of one resolution stage as a function of the 12 parameters.
struct StageObjective<'a> {
    frame: &'a Frame,
    img: Volume3D,
    mask: Volume3D,
    t_vals: Vec<f64>,
    tm_vals: Vec<f64>,
    tm_sum: f64,
    points: Vec<Vector3<f64>>,
    vox_linear: Matrix3<f64>,
    vox_shift: Vector3<f64>,
}

impl<'a> StageObjective<'a> {
    fn new(
        img: &Volume3D,
        tmpl: &Volume3D,
        img_mask: &Volume3D,
        tmpl_mask: &Volume3D,
        frame: &'a Frame,
        h: f64,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("stage spacing must be positive, got {h}")));
        }
        let coarse = regrid(tmpl.grid(), h);
        let points: Vec<Vector3<f64>> = (0..coarse.len())
            .map(|i| {
                let c = coarse.coords(i);
                Vector3::from(coarse.voxel_to_world([c[0] as f64, c[1] as f64, c[2] as f64]))
            })
            .collect();
        // template values come from the same interpolant as the warped image
        // so that the true alignment is a stationary point of both terms
        let tmpl_vox = tmpl.grid().world_to_voxel_matrix();
        let at_points = |vol: &Volume3D| -> Vec<f64> {
            points
                .iter()
                .map(|p| {
                    let v = tmpl_vox * p.push(1.0);
                    vol.sample_cubic_with_gradient([v[0], v[1], v[2]]).0
                })
                .collect()
        };
        let t_vals = at_points(&gaussian_smooth(tmpl, h));
        let tm_vals = at_points(&gaussian_smooth(tmpl_mask, h));
        let to_vox = img.grid().world_to_voxel_matrix();
        Ok(Self {
            frame,
            img: gaussian_smooth(img, h),
            mask: gaussian_smooth(img_mask, h),
            tm_sum: tm_vals.iter().sum(),
            t_vals,
            tm_vals,
            points,
            vox_linear: to_vox.fixed_view::<3, 3>(0, 0).into_owned(),
            vox_shift: to_vox.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let m = self.frame.transform(theta);
        let full_lin = self.vox_linear * m.linear();
        let full_shift = self.vox_linear * m.translation_part() + self.vox_shift;
        let n = self.points.len() as f64;
        let mut samples = Vec::with_capacity(self.points.len());
        let mut p_sum = 0.0;
        let mut m_sum = 0.0;
        let mut sq = 0.0;
        for (k, y) in self.points.iter().enumerate() {
            let v = full_lin * y + full_shift;
            let v = [v[0], v[1], v[2]];
            let (iv, ig) = self.img.sample_cubic_with_gradient(v);
            let (mv, mg) = self.mask.sample_cubic_with_gradient(v);
            let r = iv - self.t_vals[k];
            sq += r * r;
            p_sum += mv * self.tm_vals[k];
            m_sum += mv;
            samples.push((r, ig, mg));
        }
        let denom = m_sum + self.tm_sum + DICE_EPS;
        let loss = sq / n + 1.0 - 2.0 * p_sum / denom;
        let mut grad = vec![0.0; 12];
        let vox_t = self.vox_linear.transpose();
        for (k, (r, ig, mg)) in samples.into_iter().enumerate() {
            let dm = -2.0 * self.tm_vals[k] / denom + 2.0 * p_sum / (denom * denom);
            let gv = Vector3::new(
                2.0 * r / n * ig[0] + dm * mg[0],
                2.0 * r / n * ig[1] + dm * mg[1],
                2.0 * r / n * ig[2] + dm * mg[2],
            );
            if gv == Vector3::zeros() {
                continue;
            }
            let gp = vox_t * gv;
            let q = (self.points[k] - self.frame.center) / self.frame.scale;
            for i in 0..3 {
                let s = self.frame.scale * gp[i];
                for j in 0..3 {
                    grad[3 * i + j] += s * q[j];
                }
                grad[9 + i] += s;
            }
        }
        (loss, grad)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    img: &Volume3D,
    tmpl: &Volume3D,
    img_mask: &Volume3D,
    tmpl_mask: &Volume3D,
    frame: &Frame,
    theta0: Vec<f64>,
    stage: &AffineStage,
    descent: &DescentConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = stage.spacing_mm;
    let obj = StageObjective::new(img, tmpl, img_mask, tmpl_mask, frame, h)?;
    let mut trace = Vec::new();
    let grad = |e: &(f64, Vec<f64>)| Ok(e.1.clone());
    let (theta, _) = minimize(theta0, stage.iterations, descent, |t| Ok(obj.evaluate(t)), grad, |r: &StepRecord, _| {
        if r.accepted {
            trace.push(r.loss);
        }
    })?;
    log::debug!(
        "affine stage {h} mm: loss {:.6} -> {:.6}",
        trace[0],
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok((theta, trace))
}
