//! TOML run configuration with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentKind, AugmentSpec};
use crate::error::{Error, Result};
use crate::registration::{ElasticityParams, ShootingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Subjects processed concurrently.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("vbmkit_run"),
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepToggles {
    pub affine: bool,
    pub tissue: bool,
    pub gm_masking: bool,
    pub nonlinear: bool,
    pub smoothing: bool,
    pub vbm: bool,
}

impl Default for StepToggles {
    fn default() -> Self {
        Self {
            affine: true,
            tissue: true,
            gm_masking: true,
            nonlinear: true,
            smoothing: true,
            vbm: false,
        }
    }
}

impl StepToggles {
    pub fn none() -> Self {
        Self {
            affine: false,
            tissue: false,
            gm_masking: false,
            nonlinear: false,
            smoothing: false,
            vbm: false,
        }
    }
}

/// Template in the space every subject is registered to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateInput {
    /// Tissue map (0–3).
    pub tissue: PathBuf,
    /// T1-like image, needed for affine registration.
    pub image: Option<PathBuf>,
    /// Brain mask, needed for affine registration.
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectInput {
    pub id: String,
    /// Precomputed tissue map in native space.
    pub tissue: PathBuf,
    pub image: Option<PathBuf>,
    /// Precomputed brain mask.
    pub mask: Option<PathBuf>,
    /// Voxels whose GM is redistributed, in native space.
    pub gm_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineSection {
    /// Stage spacings in mm, coarse to fine.
    pub spacing_mm: Vec<f64>,
    pub iterations: Vec<usize>,
    pub initial_step: f64,
}

impl Default for AffineSection {
    fn default() -> Self {
        Self {
            spacing_mm: vec![12.0, 6.0],
            iterations: vec![500, 100],
            initial_step: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GmMaskingSection {
    /// Template-space mask used for subjects without their own.
    pub template_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearSection {
    pub mu: f64,
    pub lambda: f64,
    /// Weight of the elasticity term; `None` means 0.01 divided by the
    /// number of template voxels.
    pub big_lambda: Option<f64>,
    pub tau: u32,
    pub iterations: usize,
    pub initial_step: f64,
    pub multiresolution: bool,
    pub reject_folding: bool,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 0.5,
            big_lambda: None,
            tau: 7,
            iterations: 200,
            initial_step: 0.25,
            multiresolution: false,
            reject_folding: true,
        }
    }
}

impl NonlinearSection {
    pub fn elasticity(&self, n_voxels: usize) -> Result<ElasticityParams> {
        let big = self.big_lambda.unwrap_or(0.01 / n_voxels.max(1) as f64);
        ElasticityParams::new(self.mu, self.lambda, big).map_err(|e| Error::ConfigInvalid(format!("nonlinear: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub fwhm_mm: f64,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self { fwhm_mm: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbmSection {
    /// CSV design; subject ids in the first column must match the config.
    pub design: Option<PathBuf>,
    pub target: String,
    pub fraction: f64,
    /// Resampled repeats; 0 skips the median t-map.
    pub repeats: usize,
    pub p_threshold: f64,
    /// Analysis mask; defaults to the template brain mask when present.
    pub mask: Option<PathBuf>,
}

impl Default for VbmSection {
    fn default() -> Self {
        Self {
            design: None,
            target: String::new(),
            fraction: 0.8,
            repeats: 100,
            p_threshold: 0.001,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentTarget {
    Segmentation,
    Registration,
}

/// One augmentation applied to subject images for segmentation training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentEntry {
    pub target: AugmentTarget,
    pub kind: AugmentKind,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentEntry {
    pub fn spec(&self) -> AugmentSpec {
        AugmentSpec {
            kind: self.kind,
            magnitude: self.magnitude,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub steps: StepToggles,
    pub template: Option<TemplateInput>,
    pub subjects: Vec<SubjectInput>,
    pub affine: AffineSection,
    pub gm_masking: GmMaskingSection,
    pub nonlinear: NonlinearSection,
    pub smoothing: SmoothingSection,
    pub vbm: VbmSection,
    pub augment: Vec<AugmentEntry>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides such as
    /// `nonlinear.iterations=50`. Values are read as TOML, falling back to a
    /// plain string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigInvalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigInvalid(e.to_string()))?;
        cfg.check_ranges()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes relative input and output paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        fix(&mut self.run.output_dir);
        if let Some(t) = &mut self.template {
            fix(&mut t.tissue);
            fix_opt(&mut t.image);
            fix_opt(&mut t.mask);
        }
        for s in &mut self.subjects {
            fix(&mut s.tissue);
            fix_opt(&mut s.image);
            fix_opt(&mut s.mask);
            fix_opt(&mut s.gm_mask);
        }
        fix_opt(&mut self.gm_masking.template_mask);
        fix_opt(&mut self.vbm.design);
        fix_opt(&mut self.vbm.mask);
    }

    fn check_ranges(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.run.jobs == 0 {
            return bad("run.jobs must be at least 1".into());
        }
        let a = &self.affine;
        if a.spacing_mm.is_empty() || a.spacing_mm.len() != a.iterations.len() {
            return bad("affine.spacing_mm and affine.iterations must be non-empty and equally long".into());
        }
        if a.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) || !(a.initial_step > 0.0) {
            return bad("affine spacings and initial_step must be positive".into());
        }
        let n = &self.nonlinear;
        ShootingConfig::new(n.tau).map_err(|e| Error::ConfigInvalid(format!("nonlinear.tau: {e}")))?;
        n.elasticity(1)?;
        if n.iterations == 0 || !(n.initial_step > 0.0) {
            return bad("nonlinear.iterations and nonlinear.initial_step must be positive".into());
        }
        if !(self.smoothing.fwhm_mm.is_finite() && self.smoothing.fwhm_mm >= 0.0) {
            return bad("smoothing.fwhm_mm must be non-negative".into());
        }
        let v = &self.vbm;
        if !(v.fraction > 0.0 && v.fraction <= 1.0) {
            return bad("vbm.fraction must lie in (0, 1]".into());
        }
        if !(v.p_threshold > 0.0 && v.p_threshold < 1.0) {
            return bad("vbm.p_threshold must lie in (0, 1)".into());
        }
        for (i, e) in self.augment.iter().enumerate() {
            if e.target == AugmentTarget::Registration {
                return bad(format!(
                    "augment[{i}]: registration training takes no augmentation; use target = \"segmentation\""
                ));
            }
            e.spec().validate().map_err(|err| Error::ConfigInvalid(format!("augment[{i}]: {err}")))?;
        }
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("subject ids must be unique".into());
        }
        Ok(())
    }

    /// Checks step dependencies and that every referenced file exists.
    pub fn validate_inputs(&self) -> Result<()> {
        let s = &self.steps;
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        let needs_subjects = s.affine || s.tissue || s.gm_masking || s.nonlinear || s.smoothing || s.vbm;
        if needs_subjects && self.subjects.is_empty() {
            return bad("enabled steps need at least one [[subjects]] entry");
        }
        if (s.gm_masking || s.nonlinear || s.smoothing || s.vbm) && !s.tissue {
            return bad("gm_masking, nonlinear, smoothing and vbm need the tissue step");
        }
        if (s.affine || s.nonlinear) && self.template.is_none() {
            return bad("affine and nonlinear steps need a [template]");
        }
        if s.affine {
            let t = self.template.as_ref().expect("checked above");
            if t.image.is_none() || t.mask.is_none() {
                return bad("affine step needs template.image and template.mask");
            }
            if self.subjects.iter().any(|x| x.image.is_none() || x.mask.is_none()) {
                return bad("affine step needs image and mask for every subject");
            }
        }
        if s.gm_masking && self.gm_masking.template_mask.is_none() && self.subjects.iter().any(|x| x.gm_mask.is_none()) {
            return bad("gm_masking needs gm_masking.template_mask or a gm_mask for every subject");
        }
        if s.vbm {
            if self.vbm.design.is_none() || self.vbm.target.is_empty() {
                return bad("vbm step needs vbm.design and vbm.target");
            }
        }
        let mut paths: Vec<&PathBuf> = Vec::new();
        if let Some(t) = &self.template {
            paths.push(&t.tissue);
            paths.extend(t.image.iter().chain(t.mask.iter()));
        }
        for x in &self.subjects {
            paths.push(&x.tissue);
            paths.extend(x.image.iter().chain(x.mask.iter()).chain(x.gm_mask.iter()));
        }
        paths.extend(self.gm_masking.template_mask.iter());
        paths.extend(self.vbm.design.iter().chain(self.vbm.mask.iter()));
        if let Some(p) = paths.iter().find(|p| !p.is_file()) {
            return Err(Error::ConfigInvalid(format!("input file {} does not exist", p.display())));
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::ConfigInvalid(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigInvalid(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::ConfigInvalid(format!("override '{key}': '{part}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.smoothing.fwhm_mm, 6.0);
        assert_eq!(c.nonlinear.tau, 7);
    }

    #[test]
    fn overrides_apply() {
        let c = PipelineConfig::from_toml_with_overrides(
            "[nonlinear]\niterations = 10\n",
            &[
                "nonlinear.iterations=25".into(),
                "steps.vbm=true".into(),
                "vbm.target=age".into(),
                "run.output_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.nonlinear.iterations, 25);
        assert!(c.steps.vbm);
        assert_eq!(c.vbm.target, "age");
        assert_eq!(c.run.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(PipelineConfig::from_toml_str("[nonlinear]\nitrations = 3"), Err(Error::ConfigInvalid(_))));
        assert!(matches!(
            PipelineConfig::from_toml_with_overrides("", &["nonlinear.tau=0".into()]),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(PipelineConfig::from_toml_with_overrides("", &["nonlinear".into()]).is_err());
    }

    #[test]
    fn registration_augmentation_rejected() {
        let text = "[[augment]]\ntarget = \"registration\"\nkind = \"flip\"\n";
        assert!(matches!(PipelineConfig::from_toml_str(text), Err(Error::ConfigInvalid(_))));
        let text = "[[augment]]\ntarget = \"segmentation\"\nkind = \"rotate\"\nmagnitude = 30.0\n";
        assert!(matches!(PipelineConfig::from_toml_str(text), Err(Error::ConfigInvalid(_))));
        let text = "[[augment]]\ntarget = \"segmentation\"\nkind = \"rotate\"\nmagnitude = 10.0\nseed = 2\n";
        assert_eq!(PipelineConfig::from_toml_str(text).unwrap().augment.len(), 1);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.subjects.push(SubjectInput {
            id: "s1".into(),
            tissue: "p0.nii".into(),
            image: None,
            mask: None,
            gm_mask: None,
        });
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_inputs_detected() {
        let mut c = PipelineConfig::default();
        assert!(c.validate_inputs().is_err());
        c.steps = StepToggles::none();
        c.validate_inputs().unwrap();
        c.steps.tissue = true;
        c.subjects.push(SubjectInput {
            id: "s1".into(),
            tissue: "/nonexistent/p0.nii".into(),
            image: None,
            mask: None,
            gm_mask: None,
        });
        assert!(matches!(c.validate_inputs(), Err(Error::ConfigInvalid(m)) if m.contains("does not exist")));
    }
}
