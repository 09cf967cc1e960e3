//! Pairwise registration of two image files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::NonlinearSection;
use super::io::{relative, write_field};
use crate::error::{Error, Result};
use crate::nifti::{read_nifti, write_nifti};
use crate::registration::{
    affine_register, diffeo_register_channels, jacobian_determinant, mse_dissimilarity, warp, DescentConfig,
    DiffeoOptions, ShootingConfig,
};
use crate::volume::resample_affine;

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterRequest {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    /// Brain masks; when both are given an affine stage runs first.
    pub masks: Option<(PathBuf, PathBuf)>,
    pub nonlinear: NonlinearSection,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterSummary {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub min_jacobian: f64,
    pub big_lambda: f64,
    pub iterations: usize,
    pub accepted: usize,
    /// Accepted losses never increased.
    pub monotone: bool,
    pub seconds: f64,
    pub outputs: BTreeMap<String, String>,
}

pub const SUMMARY_NAME: &str = "register.json";

/// Registers `moving` to `fixed` and writes the warped image, both
/// deformations, the Jacobian determinant, the loss trace and a JSON
/// summary into `out_dir`.
pub fn register_files(req: &RegisterRequest) -> Result<RegisterSummary> {
    let t0 = Instant::now();
    let fixed = read_nifti(&req.fixed)?;
    let mut moving = read_nifti(&req.moving)?;
    let out = &req.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = BTreeMap::new();
    if let Some((mm, fm)) = &req.masks {
        let mmask = read_nifti(mm)?;
        let fmask = read_nifti(fm)?;
        let t = affine_register(&moving, &fixed, &mmask, &fmask).map_err(|e| e.in_step("affine"))?;
        moving = resample_affine(&moving, fixed.grid(), &t);
        let p = out.join("affine.nii");
        write_nifti(&moving, &p)?;
        outputs.insert("affine".into(), relative(&p, out));
    }
    fixed.grid().ensure_same(moving.grid(), "moving/fixed")?;
    let n = &req.nonlinear;
    let params = n.elasticity(fixed.len())?;
    let opts = DiffeoOptions {
        iterations: n.iterations,
        descent: DescentConfig {
            initial_step: n.initial_step,
            ..DescentConfig::default()
        },
        multiresolution: n.multiresolution,
        reject_folding: n.reject_folding,
    };
    let res = diffeo_register_channels(&[&moving], &[&fixed], &params, ShootingConfig::new(n.tau)?, &opts)
        .map_err(|e| e.in_step("nonlinear"))?;
    let warped = warp(&moving, &res.forward)?;
    let mut save = |key: &str, f: &dyn Fn(&std::path::Path) -> Result<()>| -> Result<()> {
        let p = out.join(format!("{key}.nii"));
        f(&p)?;
        outputs.insert(key.to_string(), relative(&p, out));
        Ok(())
    };
    save("warped", &|p| write_nifti(&warped, p))?;
    save("y_forward", &|p| write_field(&res.forward, p))?;
    save("y_backward", &|p| write_field(&res.backward, p))?;
    save("jacobian", &|p| write_nifti(&jacobian_determinant(&res.forward), p))?;
    let trace = out.join("trace.csv");
    res.report.write_csv(&trace)?;
    outputs.insert("trace".into(), relative(&trace, out));
    let losses = res.report.accepted_losses();
    let summary = RegisterSummary {
        initial_mse: mse_dissimilarity(&moving, &fixed)?,
        final_mse: mse_dissimilarity(&warped, &fixed)?,
        min_jacobian: res.min_jacobian,
        big_lambda: params.big_lambda,
        iterations: res.report.records.len().saturating_sub(1),
        accepted: losses.len().saturating_sub(1),
        monotone: losses.windows(2).all(|w| w[1] <= w[0]),
        seconds: t0.elapsed().as_secs_f64(),
        outputs,
    };
    let path = out.join(SUMMARY_NAME);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
