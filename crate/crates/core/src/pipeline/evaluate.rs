//! Per-case segmentation and registration metrics with median and standard
//! deviation rows.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nifti::read_nifti;
use crate::registration::{linear_elasticity, mse_dissimilarity, DisplacementField3D, ElasticityParams};
use crate::tissue::{dice_foreground, TissueMap};
use crate::vbm::median;

use super::io::read_field;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case: String,
    pub dice_csf: f64,
    pub dice_gm: f64,
    pub dice_wm: f64,
    pub dice_foreground: f64,
    pub dice_gwm_mean: f64,
    pub mse: f64,
    /// Linear elasticity of the case's deformation, when one was given.
    pub le: Option<f64>,
}

impl CaseMetrics {
    fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.dice_csf),
            Some(self.dice_gm),
            Some(self.dice_wm),
            Some(self.dice_foreground),
            Some(self.dice_gwm_mean),
            Some(self.mse),
            self.le,
        ]
    }
}

pub const COLUMNS: [&str; 8] = [
    "case",
    "dice_csf",
    "dice_gm",
    "dice_wm",
    "dice_foreground",
    "dice_gwm_mean",
    "mse",
    "le",
];

pub fn evaluate_case(
    case: &str,
    pred: &TissueMap,
    truth: &TissueMap,
    field: Option<&DisplacementField3D>,
    params: &ElasticityParams,
) -> Result<CaseMetrics> {
    let d = dice_foreground(pred, truth)?;
    Ok(CaseMetrics {
        case: case.to_string(),
        dice_csf: d.csf,
        dice_gm: d.gm,
        dice_wm: d.wm,
        dice_foreground: d.foreground,
        dice_gwm_mean: d.gwm_mean,
        mse: mse_dissimilarity(pred.volume(), truth.volume())?,
        le: field.map(|f| linear_elasticity(f, params)),
    })
}

/// Loads prediction/truth tissue maps (and optional fields) case by case.
pub fn evaluate_files(
    pred: &[impl AsRef<Path>],
    truth: &[impl AsRef<Path>],
    fields: &[impl AsRef<Path>],
    params: &ElasticityParams,
) -> Result<Vec<CaseMetrics>> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty prediction and truth lists, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if !fields.is_empty() && fields.len() != pred.len() {
        return Err(Error::InvalidArgument("give one field per case or none".into()));
    }
    pred.iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (p, t))| {
            let p = p.as_ref();
            let case = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("case{i}"));
            let pm = TissueMap::new(read_nifti(p)?)?;
            let tm = TissueMap::new(read_nifti(t)?)?;
            let field = fields.get(i).map(|f| read_field(f.as_ref())).transpose()?;
            if let Some(f) = &field {
                pm.volume().grid().ensure_same(f.grid(), "prediction/field")?;
            }
            evaluate_case(&case, &pm, &tm, field.as_ref(), params)
        })
        .collect()
}

/// Sample standard deviation; zero for a single value.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Median and standard deviation of every metric column; `None` where no
/// case has a value.
pub fn summarize(cases: &[CaseMetrics]) -> ([Option<f64>; 7], [Option<f64>; 7]) {
    let mut med = [None; 7];
    let mut sd = [None; 7];
    for k in 0..7 {
        let mut col: Vec<f64> = cases.iter().filter_map(|c| c.values()[k]).collect();
        if !col.is_empty() {
            sd[k] = Some(std_dev(&col));
            med[k] = Some(median(&mut col));
        }
    }
    (med, sd)
}

/// CSV with one row per case followed by `median` and `std` rows.
pub fn write_metrics_csv(cases: &[CaseMetrics], out: impl Write) -> Result<()> {
    let err = |e: csv::Error| Error::InvalidArgument(format!("metrics CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(err)?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut row = |name: &str, values: [Option<f64>; 7]| {
        let mut r = vec![name.to_string()];
        r.extend(values.into_iter().map(cell));
        w.write_record(&r).map_err(err)
    };
    for c in cases {
        row(&c.case, c.values())?;
    }
    let (med, sd) = summarize(cases);
    row("median", med)?;
    row("std", sd)?;
    w.flush().map_err(|e| Error::InvalidArgument(format!("metrics CSV: {e}")))
}
