//! Per-subject preprocessing in fixed step order, followed by the group
//! statistics, with a JSON manifest of everything that ran.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{PipelineConfig, VbmSection};
use super::io::{relative, write_field};
use crate::augment;
use crate::error::{Error, Result};
use crate::nifti::{read_nifti, write_nifti};
use crate::registration::{
    affine_register_with, diffeo_register_channels, jacobian_determinant, mse_dissimilarity, warp, AffineOptions,
    AffineStage, DescentConfig, DiffeoOptions, ShootingConfig,
};
use crate::smooth::gaussian_smooth;
use crate::tissue::{gm_mask_redistribute, tissue_to_probabilities, ProbabilityMaps, TissueMap};
use crate::vbm::{glm_tmap_masked, resampled_median_tmap, threshold_tmap, tmap_correlation, DesignMatrix, TMap};
use crate::volume::{resample_affine, AffineTransform, Volume3D};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStep {
    pub subject: Option<String>,
    pub step: String,
    pub params: serde_json::Value,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SubjectReport {
    pub id: String,
    /// Output name → path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub initial_mse: Option<f64>,
    pub final_mse: Option<f64>,
    pub min_jacobian: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbmReport {
    pub outputs: BTreeMap<String, String>,
    pub dof: usize,
    pub max_abs_t: f64,
    pub median_max_abs_t: Option<f64>,
    /// Correlation of |t| between the plain and the median t-map.
    pub correlation: Option<f64>,
    pub supra_threshold: usize,
    pub zero_residual: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub steps: Vec<ManifestStep>,
    pub subjects: Vec<SubjectReport>,
    pub vbm: Option<VbmReport>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("manifest {}: {e}", path.display())))
    }

    /// Copy with all timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        m.steps.iter_mut().for_each(|s| s.seconds = 0.0);
        m
    }
}

struct Template {
    tissue: TissueMap,
    image: Option<Volume3D>,
    mask: Option<Volume3D>,
    probs: ProbabilityMaps,
}

struct SubjectOutcome {
    steps: Vec<ManifestStep>,
    report: SubjectReport,
    gm: Option<Volume3D>,
}

/// Runs every enabled step and writes `manifest.json` into the output
/// directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate_inputs()?;
    let out = &cfg.run.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let template = cfg.template.as_ref().map(load_template).transpose()?;

    let active = cfg.steps.affine || cfg.steps.tissue;
    let outcomes: Vec<Result<SubjectOutcome>> = if active {
        run_subjects(cfg, template.as_ref())
    } else {
        Vec::new()
    };
    let mut steps = Vec::new();
    let mut subjects = Vec::new();
    let mut maps = Vec::new();
    for o in outcomes {
        let o = o?;
        steps.extend(o.steps);
        subjects.push(o.report);
        maps.extend(o.gm);
    }
    let vbm = if cfg.steps.vbm {
        let t0 = Instant::now();
        let (report, params) = run_vbm(cfg, template.as_ref(), &maps).map_err(|e| e.in_step("vbm"))?;
        steps.push(ManifestStep {
            subject: None,
            step: "vbm".into(),
            params,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Some(report)
    } else {
        None
    };

    let mut seeds = BTreeMap::new();
    seeds.insert("run".to_string(), cfg.run.seed);
    for (i, a) in cfg.augment.iter().enumerate() {
        seeds.insert(format!("augment.{i}"), a.seed);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seeds,
        config: serde_json::to_value(cfg).expect("config serializes"),
        steps,
        subjects,
        vbm,
    };
    let path = out.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_template(t: &super::config::TemplateInput) -> Result<Template> {
    let step = |e: Error| e.in_step("template");
    let tissue = TissueMap::new(read_nifti(&t.tissue)?).map_err(step)?;
    let image = t.image.as_ref().map(read_nifti).transpose()?;
    let mask = t.mask.as_ref().map(read_nifti).transpose()?;
    for v in image.iter().chain(mask.iter()) {
        tissue.volume().grid().ensure_same(v.grid(), "template inputs").map_err(step)?;
    }
    let probs = tissue_to_probabilities(&tissue);
    Ok(Template {
        tissue,
        image,
        mask,
        probs,
    })
}

fn run_subjects(cfg: &PipelineConfig, template: Option<&Template>) -> Vec<Result<SubjectOutcome>> {
    let n = cfg.subjects.len();
    let jobs = cfg.run.jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(|i| process_subject(cfg, template, i)).collect();
    }
    let mut slots: Vec<Option<Result<SubjectOutcome>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                s.spawn(move || {
                    (j..n)
                        .step_by(jobs)
                        .map(|i| (i, process_subject(cfg, template, i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("subject worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every subject processed")).collect()
}

/// Timing and bookkeeping for one subject.
struct Recorder<'a> {
    id: &'a str,
    dir: PathBuf,
    root: &'a Path,
    steps: Vec<ManifestStep>,
    report: SubjectReport,
}

impl Recorder<'_> {
    fn step<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<(T, serde_json::Value)>) -> Result<T> {
        let t0 = Instant::now();
        let (value, params) = f(self).map_err(|e| e.in_step(format!("{}/{name}", self.id)))?;
        self.steps.push(ManifestStep {
            subject: Some(self.id.to_string()),
            step: name.into(),
            params,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(value)
    }

    fn write(&mut self, key: &str, file: &str, vol: &Volume3D) -> Result<()> {
        let path = self.dir.join(file);
        write_nifti(vol, &path)?;
        self.report.outputs.insert(key.into(), relative(&path, self.root));
        Ok(())
    }

    fn write_text(&mut self, key: &str, file: &str, text: &str) -> Result<()> {
        let path = self.dir.join(file);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.report.outputs.insert(key.into(), relative(&path, self.root));
        Ok(())
    }
}

fn mean_mse(a: &[&Volume3D], b: &[&Volume3D]) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += mse_dissimilarity(x, y)?;
    }
    Ok(s / a.len() as f64)
}

fn process_subject(cfg: &PipelineConfig, template: Option<&Template>, index: usize) -> Result<SubjectOutcome> {
    let subj = &cfg.subjects[index];
    let root = cfg.run.output_dir.as_path();
    let dir = root.join(&subj.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rec = Recorder {
        id: &subj.id,
        dir,
        root,
        steps: Vec::new(),
        report: SubjectReport {
            id: subj.id.clone(),
            ..Default::default()
        },
    };
    let steps = cfg.steps;
    let mut tissue_vol = read_nifti(&subj.tissue)?;
    let mut gm_mask = subj.gm_mask.as_ref().map(read_nifti).transpose()?;

    if !cfg.augment.is_empty() {
        if let Some(image_path) = &subj.image {
            let image = read_nifti(image_path)?;
            rec.step("augment", |r| {
                let mut names = Vec::new();
                for (i, entry) in cfg.augment.iter().enumerate() {
                    let out = augment::apply(&image, &entry.spec())?;
                    let file = format!("augment_{i:02}_{}.nii", entry.kind);
                    r.write(&format!("augment_{i:02}"), &file, &out)?;
                    names.push(file);
                }
                Ok(((), json!({ "entries": cfg.augment, "files": names })))
            })?;
        }
    }

    if steps.affine {
        let t = template.expect("validated");
        let image = read_nifti(subj.image.as_ref().expect("validated"))?;
        let mask = read_nifti(subj.mask.as_ref().expect("validated"))?;
        let transform = rec.step("affine", |r| {
            image.grid().ensure_same(mask.grid(), "subject image/mask")?;
            image.grid().ensure_same(tissue_vol.grid(), "subject image/tissue")?;
            let timg = t.image.as_ref().expect("validated");
            let tmask = t.mask.as_ref().expect("validated");
            let masked = |v: &Volume3D, m: &Volume3D| -> Result<Volume3D> {
                v.with_data(v.data().iter().zip(m.data()).map(|(a, b)| a * b).collect())
            };
            let opts = AffineOptions {
                stages: cfg
                    .affine
                    .spacing_mm
                    .iter()
                    .zip(&cfg.affine.iterations)
                    .map(|(&spacing_mm, &iterations)| AffineStage { spacing_mm, iterations })
                    .collect(),
                descent: DescentConfig {
                    initial_step: cfg.affine.initial_step,
                    ..AffineOptions::default().descent
                },
            };
            let res = affine_register_with(&masked(&image, &mask)?, &masked(timg, tmask)?, &mask, tmask, &opts)?;
            let text = matrix_text(&res.transform);
            r.write_text("affine", "affine.txt", &text)?;
            let final_losses: Vec<f64> = res.losses.iter().filter_map(|l| l.last().copied()).collect();
            Ok((
                res.transform,
                json!({
                    "spacing_mm": cfg.affine.spacing_mm,
                    "iterations": cfg.affine.iterations,
                    "initial_step": cfg.affine.initial_step,
                    "final_losses": final_losses,
                }),
            ))
        })?;
        let tgrid = t.tissue.volume().grid();
        // trilinear weights can round a hair past the label range
        tissue_vol = resample_affine(&tissue_vol, tgrid, &transform).map(|v| v.clamp(0.0, 3.0))?;
        rec.write("affine_tissue", "affine_p0.nii", &tissue_vol)?;
        if let Some(m) = gm_mask.take() {
            let r = resample_affine(&m, tgrid, &transform);
            gm_mask = Some(r.map(|v| if v > 0.5 { 1.0 } else { 0.0 })?);
        }
    }

    if !steps.tissue {
        return Ok(SubjectOutcome {
            steps: rec.steps,
            report: rec.report,
            gm: None,
        });
    }
    let mut probs = rec.step("tissue", |r| {
        let map = TissueMap::new(tissue_vol.clone())?;
        let p = tissue_to_probabilities(&map);
        r.write("p1", "p1.nii", &p.gm)?;
        r.write("p2", "p2.nii", &p.wm)?;
        r.write("p3", "p3.nii", &p.csf)?;
        Ok((p, json!({ "convention": "p1 = GM, p2 = WM, p3 = CSF" })))
    })?;

    if steps.gm_masking {
        probs = rec.step("gm_masking", |_| {
            let (mask, source) = match gm_mask.take() {
                Some(m) => (m, "subject"),
                None => (
                    read_nifti(cfg.gm_masking.template_mask.as_ref().expect("validated"))?,
                    "template",
                ),
            };
            let masked = mask.count_above_half();
            let p = gm_mask_redistribute(&probs, &mask)?;
            Ok((p, json!({ "mask": source, "masked_voxels": masked })))
        })?;
    }

    let mut gm = probs.gm.clone();
    let mut wm = probs.wm.clone();
    let mut prefix = String::new();
    if steps.nonlinear {
        let t = template.expect("validated");
        (gm, wm) = rec.step("nonlinear", |r| {
            t.probs.gm.grid().ensure_same(gm.grid(), "template/subject probabilities")?;
            let n = &cfg.nonlinear;
            let params = n.elasticity(gm.len())?;
            let shoot = ShootingConfig::new(n.tau)?;
            let opts = DiffeoOptions {
                iterations: n.iterations,
                descent: DescentConfig {
                    initial_step: n.initial_step,
                    ..DescentConfig::default()
                },
                multiresolution: n.multiresolution,
                reject_folding: n.reject_folding,
            };
            let res = diffeo_register_channels(&[&gm, &wm], &[&t.probs.gm, &t.probs.wm], &params, shoot, &opts)?;
            let wgm = warp(&gm, &res.forward)?;
            let wwm = warp(&wm, &res.forward)?;
            let initial = mean_mse(&[&gm, &wm], &[&t.probs.gm, &t.probs.wm])?;
            let final_mse = mean_mse(&[&wgm, &wwm], &[&t.probs.gm, &t.probs.wm])?;
            r.report.initial_mse = Some(initial);
            r.report.final_mse = Some(final_mse);
            r.report.min_jacobian = Some(res.min_jacobian);
            r.write("wp1", "wp1.nii", &wgm)?;
            r.write("wp2", "wp2.nii", &wwm)?;
            r.write("jacobian", "jacobian.nii", &jacobian_determinant(&res.forward))?;
            for (key, field) in [("forward", &res.forward), ("backward", &res.backward)] {
                let path = r.dir.join(format!("y_{key}.nii"));
                write_field(field, &path)?;
                r.report.outputs.insert(format!("field_{key}"), relative(&path, r.root));
            }
            let trace = r.dir.join("trace.csv");
            res.report.write_csv(&trace)?;
            r.report.outputs.insert("trace".into(), relative(&trace, r.root));
            Ok((
                (wgm, wwm),
                json!({
                    "mu": params.mu,
                    "lambda": params.lambda,
                    "big_lambda": params.big_lambda,
                    "tau": n.tau,
                    "iterations": n.iterations,
                    "initial_step": n.initial_step,
                    "multiresolution": n.multiresolution,
                    "channels": ["gm", "wm"],
                    "initial_mse": initial,
                    "final_mse": final_mse,
                    "min_jacobian": res.min_jacobian,
                }),
            ))
        })?;
        prefix.push('w');
    }

    if steps.smoothing {
        let fwhm = cfg.smoothing.fwhm_mm;
        gm = rec.step("smoothing", |r| {
            let sg = gaussian_smooth(&gm, fwhm);
            let sw = gaussian_smooth(&wm, fwhm);
            r.write(&format!("s{prefix}p1"), &format!("s{prefix}p1.nii"), &sg)?;
            r.write(&format!("s{prefix}p2"), &format!("s{prefix}p2.nii"), &sw)?;
            Ok((sg, json!({ "fwhm_mm": fwhm })))
        })?;
    }
    Ok(SubjectOutcome {
        steps: rec.steps,
        report: rec.report,
        gm: Some(gm),
    })
}

fn matrix_text(t: &AffineTransform) -> String {
    t.to_rows()
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn run_vbm(cfg: &PipelineConfig, template: Option<&Template>, maps: &[Volume3D]) -> Result<(VbmReport, serde_json::Value)> {
    let v = &cfg.vbm;
    let design = DesignMatrix::from_csv_path(v.design.as_ref().expect("validated"), &v.target)?;
    // reorder design rows to the subject order of the config
    let rows = cfg
        .subjects
        .iter()
        .map(|s| {
            design
                .subject_ids()
                .iter()
                .position(|d| d == &s.id)
                .ok_or_else(|| Error::ConfigInvalid(format!("subject '{}' missing from the design", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let design = design.select_rows(&rows)?;
    let mask = match (&v.mask, template.and_then(|t| t.mask.as_ref())) {
        (Some(p), _) => Some(read_nifti(p)?),
        (None, Some(m)) if maps.first().is_some_and(|g| g.grid().same_shape(m.grid())) => Some(m.clone()),
        _ => None,
    };
    let dir = cfg.run.output_dir.join("vbm");
    vbm_analysis(maps, &design, mask.as_ref(), v, cfg.run.seed, &dir, &cfg.run.output_dir)
}

/// Plain and resampled-median t-maps, threshold mask and `summary.csv`
/// written into `dir`; output paths are reported relative to `root`.
pub fn vbm_analysis(
    maps: &[Volume3D],
    design: &DesignMatrix,
    mask: Option<&Volume3D>,
    v: &VbmSection,
    seed: u64,
    dir: &Path,
    root: &Path,
) -> Result<(VbmReport, serde_json::Value)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = BTreeMap::new();
    let mut save = |key: &str, vol: &Volume3D| -> Result<()> {
        let path = dir.join(format!("{key}.nii"));
        write_nifti(vol, &path)?;
        outputs.insert(key.to_string(), relative(&path, root));
        Ok(())
    };
    let tmap = glm_tmap_masked(maps, design, mask)?;
    save("tmap", &tmap.vol)?;
    let median: Option<TMap> = if v.repeats > 0 {
        let mut m = resampled_median_tmap(maps, design, v.fraction, v.repeats, seed)?;
        if let Some(mask) = mask {
            let data = m.vol.data().iter().zip(mask.data()).map(|(t, k)| if *k > 0.5 { *t } else { 0.0 }).collect();
            m.vol = m.vol.with_data(data)?;
        }
        save("median_tmap", &m.vol)?;
        Some(m)
    } else {
        None
    };
    let reported = median.as_ref().unwrap_or(&tmap);
    let thr = threshold_tmap(reported, v.p_threshold)?;
    save("threshold", &thr)?;
    let supra = thr.count_above_half();
    let correlation = match &median {
        Some(m) => match tmap_correlation(&tmap, m, mask) {
            Ok(r) => Some(r),
            Err(Error::DegenerateVariance) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| Error::io(&summary_path, std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::io(&summary_path, std::io::Error::other(e));
    w.write_record(["map", "dof", "max_abs_t", "supra_threshold", "correlation"]).map_err(csv_err)?;
    let fmt_opt = |c: Option<f64>| c.map(|c| c.to_string()).unwrap_or_default();
    w.write_record([
        "tmap".to_string(),
        tmap.dof.to_string(),
        tmap.max_abs().to_string(),
        threshold_tmap(&tmap, v.p_threshold)?.count_above_half().to_string(),
        String::new(),
    ])
    .map_err(csv_err)?;
    if let Some(m) = &median {
        w.write_record([
            "median_tmap".to_string(),
            m.dof.to_string(),
            m.max_abs().to_string(),
            supra.to_string(),
            fmt_opt(correlation),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    outputs.insert("summary".into(), relative(&summary_path, root));
    let report = VbmReport {
        outputs,
        dof: tmap.dof,
        max_abs_t: tmap.max_abs(),
        median_max_abs_t: median.as_ref().map(TMap::max_abs),
        correlation,
        supra_threshold: supra,
        zero_residual: tmap.zero_residual,
    };
    let params = json!({
        "target": v.target,
        "columns": design.column_names(),
        "fraction": v.fraction,
        "repeats": v.repeats,
        "seed": seed,
        "p_threshold": v.p_threshold,
        "masked": mask.is_some(),
    });
    Ok((report, params))
}
