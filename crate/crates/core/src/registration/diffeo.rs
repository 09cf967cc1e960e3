//! Diffeomorphic registration by optimizing two half velocity fields.

use std::path::Path;

use serde::Serialize;

use super::elasticity::ElasticityParams;
use super::field::{min_jacobian, DisplacementField3D, ShootingConfig};
use super::loss::{syn_backward, syn_forward, SynForward, SynTerms};
use super::optim::{minimize, DescentConfig, Evaluation, StepRecord};
use crate::error::{Error, Result};
use crate::smooth::gaussian_smooth;
use crate::volume::{sample_trilinear, Grid, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffeoOptions {
    pub iterations: usize,
    pub descent: DescentConfig,
    /// Spend half of the iterations on a half-resolution problem first.
    pub multiresolution: bool,
    /// Reject trial steps whose deformations fold, like a loss increase.
    pub reject_folding: bool,
}

impl Default for DiffeoOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            descent: DescentConfig {
                initial_step: 0.25,
                ..DescentConfig::default()
            },
            multiresolution: false,
            reject_folding: true,
        }
    }
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub level: usize,
    pub loss: f64,
    pub forward: f64,
    pub backward: f64,
    pub midpoint: f64,
    pub regularization: f64,
    pub min_jacobian: f64,
    pub accepted: bool,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffeoReport {
    pub records: Vec<IterationRecord>,
}

impl DiffeoReport {
    pub fn initial(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Losses of accepted iterates in order, starting with the initial one.
    pub fn accepted_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.accepted || r.iteration == 0)
            .map(|r| r.loss)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DiffeoResult {
    pub v_half_fwd: DisplacementField3D,
    pub v_half_bwd: DisplacementField3D,
    pub forward: DisplacementField3D,
    pub backward: DisplacementField3D,
    pub terms: SynTerms,
    pub min_jacobian: f64,
    pub report: DiffeoReport,
}

/// Forward pass plus the fold check of its deformations.
struct Trial<'a> {
    syn: SynForward<'a>,
    min_jacobian: f64,
    require_positive: bool,
}

impl Evaluation for Trial<'_> {
    fn loss(&self) -> f64 {
        self.syn.terms.total
    }

    fn admissible(&self) -> bool {
        !self.require_positive || self.min_jacobian > 0.0
    }
}

/// Registers `img` to `tmpl` with the default options and `iters` steps.
pub fn diffeo_register(
    img: &Volume3D,
    tmpl: &Volume3D,
    params: &ElasticityParams,
    cfg: ShootingConfig,
    iters: usize,
) -> Result<DiffeoResult> {
    let opts = DiffeoOptions {
        iterations: iters,
        ..Default::default()
    };
    diffeo_register_channels(&[img], &[tmpl], params, cfg, &opts)
}

/// Multichannel registration; all channels share one pair of velocities.
pub fn diffeo_register_channels(
    images: &[&Volume3D],
    templates: &[&Volume3D],
    params: &ElasticityParams,
    cfg: ShootingConfig,
    opts: &DiffeoOptions,
) -> Result<DiffeoResult> {
    params.validate()?;
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be positive".into()));
    }
    let grid = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no image channels".into()))?
        .grid()
        .clone();
    let mut report = DiffeoReport::default();
    let zero = DisplacementField3D::identity(grid.clone());
    let (init_f, init_b, fine_iters) = if opts.multiresolution && grid.dims().iter().all(|&n| n >= 8) {
        let coarse_imgs: Vec<Volume3D> = images.iter().map(|v| downsample2(v)).collect();
        let coarse_tmpls: Vec<Volume3D> = templates.iter().map(|v| downsample2(v)).collect();
        let ci: Vec<&Volume3D> = coarse_imgs.iter().collect();
        let ct: Vec<&Volume3D> = coarse_tmpls.iter().collect();
        let cz = DisplacementField3D::identity(coarse_imgs[0].grid().clone());
        let coarse_iters = opts.iterations / 2;
        let (cf, cb) = if coarse_iters > 0 {
            let (f, b, _) = run_level(&ci, &ct, params, cfg, &opts.descent, opts.reject_folding, coarse_iters, &cz, &cz, 1, &mut report)?;
            (f, b)
        } else {
            (cz.clone(), cz)
        };
        (
            upsample2(&cf, &grid),
            upsample2(&cb, &grid),
            opts.iterations - coarse_iters,
        )
    } else {
        (zero.clone(), zero, opts.iterations)
    };
    let (vf, vb, last) = run_level(
        images,
        templates,
        params,
        cfg,
        &opts.descent,
        opts.reject_folding,
        fine_iters,
        &init_f,
        &init_b,
        0,
        &mut report,
    )?;
    let min_j = min_jacobian(&last.forward).min(min_jacobian(&last.backward));
    if !(min_j > 0.0) {
        return Err(Error::JacobianFoldover { min_jacobian: min_j });
    }
    Ok(DiffeoResult {
        v_half_fwd: vf,
        v_half_bwd: vb,
        forward: last.forward,
        backward: last.backward,
        terms: last.terms,
        min_jacobian: min_j,
        report,
    })
}

/// Final state of one resolution level.
struct LevelEnd {
    forward: DisplacementField3D,
    backward: DisplacementField3D,
    terms: SynTerms,
}

#[allow(clippy::too_many_arguments)]
fn run_level(
    images: &[&Volume3D],
    templates: &[&Volume3D],
    params: &ElasticityParams,
    cfg: ShootingConfig,
    descent: &DescentConfig,
    reject_folding: bool,
    iters: usize,
    init_f: &DisplacementField3D,
    init_b: &DisplacementField3D,
    level: usize,
    report: &mut DiffeoReport,
) -> Result<(DisplacementField3D, DisplacementField3D, LevelEnd)> {
    let grid = init_f.grid().clone();
    let n3 = init_f.len() * 3;
    let split = |x: &[f64]| -> Result<(DisplacementField3D, DisplacementField3D)> {
        Ok((
            DisplacementField3D::from_flat(grid.clone(), &x[..n3])?,
            DisplacementField3D::from_flat(grid.clone(), &x[n3..])?,
        ))
    };
    let forward = |x: &[f64]| -> Result<Trial<'_>> {
        let (vf, vb) = split(x)?;
        let syn = syn_forward(images, templates, &vf, &vb, params, cfg)?;
        let min_jacobian = min_jacobian(&syn.forward).min(min_jacobian(&syn.backward));
        Ok(Trial {
            syn,
            min_jacobian,
            require_positive: reject_folding,
        })
    };
    let gradient = |e: &Trial<'_>| -> Result<Vec<f64>> {
        let (gf, gb) = syn_backward(&e.syn);
        let mut flat = Vec::with_capacity(2 * n3);
        flat.extend(gf.iter().flatten());
        flat.extend(gb.iter().flatten());
        Ok(flat)
    };
    let record = |r: &StepRecord, e: &Trial<'_>| IterationRecord {
        iteration: r.iteration,
        level,
        loss: e.syn.terms.total,
        forward: e.syn.terms.forward,
        backward: e.syn.terms.backward,
        midpoint: e.syn.terms.midpoint,
        regularization: e.syn.terms.regularization,
        min_jacobian: e.min_jacobian,
        accepted: r.accepted,
        learning_rate: r.learning_rate,
    };
    let mut x0 = init_f.to_flat();
    x0.extend(init_b.to_flat());
    let (x, last) = minimize(x0, iters, descent, forward, gradient, |r, e| {
        log::debug!("level {level} iteration {} loss {:.6e}", r.iteration, r.loss);
        report.records.push(record(r, e));
    })?;
    let (vf, vb) = split(&x)?;
    Ok((
        vf,
        vb,
        LevelEnd {
            forward: last.syn.forward,
            backward: last.syn.backward,
            terms: last.syn.terms,
        },
    ))
}

/// Halves the resolution: smooth, then sample every second voxel.
fn downsample2(vol: &Volume3D) -> Volume3D {
    let [nx, ny, nz] = vol.dims();
    let sp = vol.spacing();
    let dims = [nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2)];
    let smoothed = gaussian_smooth(vol, 2.0 * sp.iter().copied().fold(0.0, f64::max));
    let grid = Grid::with_spacing(dims, [2.0 * sp[0], 2.0 * sp[1], 2.0 * sp[2]]).expect("positive");
    Volume3D::from_fn(grid, |x, y, z| smoothed.get(2 * x, 2 * y, 2 * z)).expect("finite")
}

/// Upsamples a half-resolution velocity, doubling its voxel-unit length.
fn upsample2(v: &DisplacementField3D, fine: &Grid) -> DisplacementField3D {
    let comps = v.components();
    let coarse: Vec<Volume3D> = comps
        .into_iter()
        .map(|c| Volume3D::new(Grid::unit(v.dims()), c).expect("finite"))
        .collect();
    DisplacementField3D::from_fn(fine.clone(), |x, y, z| {
        let p = [x as f64 / 2.0, y as f64 / 2.0, z as f64 / 2.0];
        std::array::from_fn(|k| 2.0 * sample_trilinear(&coarse[k], p))
    })
    .expect("finite")
}
