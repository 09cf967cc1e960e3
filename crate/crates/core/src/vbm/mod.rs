//! Voxel-wise GLM t-maps, resampled median t-maps, t-map correlation and
//! thresholding.

mod design;
pub mod tdist;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub use design::{DesignMatrix, INTERCEPT};

/// Voxel-wise t-statistics for the design's target column.
#[derive(Debug, Clone, PartialEq)]
pub struct TMap {
    pub vol: Volume3D,
    /// Residual degrees of freedom, `n_subjects - n_columns`.
    pub dof: usize,
    /// Voxels whose residual variance was zero and got t = 0.
    pub zero_residual: usize,
}

impl TMap {
    pub fn max_abs(&self) -> f64 {
        self.vol.data().iter().fold(0.0, |m, t| m.max(t.abs()))
    }
}

/// Factorized design shared by all voxels.
struct Fit {
    x: DMatrix<f64>,
    qt: DMatrix<f64>,
    rinv: DMatrix<f64>,
    target: usize,
    /// `[(XᵀX)⁻¹]_tt`
    c_tt: f64,
    dof: usize,
}

impl Fit {
    fn new(design: &DesignMatrix) -> Result<Self> {
        let x = design.matrix().clone();
        let (n, k) = x.shape();
        if n <= k {
            return Err(Error::InvalidArgument(format!(
                "{n} subjects leave no residual degrees of freedom for {k} columns"
            )));
        }
        let qr = x.clone().qr();
        let rinv = qr.r().try_inverse().ok_or(Error::RankDeficientDesign)?;
        let qt = qr.q().transpose();
        let target = design.target_index();
        let c_tt = rinv.row(target).norm_squared();
        Ok(Self {
            x,
            qt,
            rinv,
            target,
            c_tt,
            dof: n - k,
        })
    }

    /// t for one voxel, or `None` when the fit leaves no residual.
    fn t(&self, y: &DVector<f64>) -> Option<f64> {
        let beta = &self.rinv * (&self.qt * y);
        let resid = y - &self.x * &beta;
        let rss = resid.norm_squared();
        let scale = y.norm_squared();
        if rss <= 1e-20 * scale || scale == 0.0 {
            return None;
        }
        let se = (rss / self.dof as f64 * self.c_tt).sqrt();
        Some(beta[self.target] / se)
    }
}

fn check_stack(maps: &[Volume3D], design: &DesignMatrix, mask: Option<&Volume3D>) -> Result<()> {
    if maps.len() != design.n_subjects() {
        return Err(Error::SubjectCountMismatch {
            maps: maps.len(),
            rows: design.n_subjects(),
        });
    }
    let first = maps.first().ok_or(Error::SubjectCountMismatch { maps: 0, rows: 0 })?;
    for m in &maps[1..] {
        first.grid().ensure_same(m.grid(), "subject maps")?;
    }
    if let Some(mask) = mask {
        first.grid().ensure_same(mask.grid(), "analysis mask")?;
    }
    Ok(())
}

fn in_mask(mask: Option<&Volume3D>, i: usize) -> bool {
    mask.is_none_or(|m| m.data()[i] > 0.5)
}

fn voxel_values(maps: &[Volume3D], rows: &[usize], i: usize) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| maps[r].data()[i]))
}

/// Ordinary least squares at every voxel; t = β̂_target / SE(β̂_target).
///
/// Voxels that the design fits exactly get t = 0 and are counted in
/// [`TMap::zero_residual`].
pub fn glm_tmap(maps: &[Volume3D], design: &DesignMatrix) -> Result<TMap> {
    glm_tmap_masked(maps, design, None)
}

/// As [`glm_tmap`], with t = 0 outside the mask (values > 0.5 are inside).
pub fn glm_tmap_masked(maps: &[Volume3D], design: &DesignMatrix, mask: Option<&Volume3D>) -> Result<TMap> {
    check_stack(maps, design, mask)?;
    let fit = Fit::new(design)?;
    let rows: Vec<usize> = (0..maps.len()).collect();
    let mut zero_residual = 0;
    let data = (0..maps[0].len())
        .map(|i| {
            if !in_mask(mask, i) {
                return 0.0;
            }
            fit.t(&voxel_values(maps, &rows, i)).unwrap_or_else(|| {
                zero_residual += 1;
                0.0
            })
        })
        .collect();
    if zero_residual > 0 {
        log::warn!("{zero_residual} voxels with zero residual variance set to t = 0");
    }
    Ok(TMap {
        vol: maps[0].with_data(data)?,
        dof: fit.dof,
        zero_residual,
    })
}

/// Seeded subsets of `ceil(fraction · n)` distinct subjects, each sorted.
pub fn resample_subsets(n: usize, fraction: f64, repeats: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    // guard against 0.8·10 landing a hair above 8
    let m = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..repeats)
        .map(|_| {
            let mut s = rand::seq::index::sample(&mut rng, n, m).into_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

/// Voxel-wise median of t-maps fitted on seeded subject subsets.
///
/// The reported `dof` is that of a single subset fit and `zero_residual`
/// counts voxels where any repeat had a perfect fit.
pub fn resampled_median_tmap(
    maps: &[Volume3D],
    design: &DesignMatrix,
    fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<TMap> {
    check_stack(maps, design, None)?;
    let subsets = resample_subsets(maps.len(), fraction, repeats, seed)?;
    let fits: Vec<Fit> = subsets
        .iter()
        .map(|rows| Fit::new(&design.select_rows(rows)?))
        .collect::<Result<_>>()?;
    let mut zero_residual = 0;
    let mut ts = vec![0.0; repeats];
    let data = (0..maps[0].len())
        .map(|i| {
            let mut flagged = false;
            for (t, (fit, rows)) in ts.iter_mut().zip(fits.iter().zip(&subsets)) {
                *t = fit.t(&voxel_values(maps, rows, i)).unwrap_or_else(|| {
                    flagged = true;
                    0.0
                });
            }
            zero_residual += usize::from(flagged);
            median(&mut ts)
        })
        .collect();
    Ok(TMap {
        vol: maps[0].with_data(data)?,
        dof: fits[0].dof,
        zero_residual,
    })
}

/// Median, averaging the middle pair for even counts. Reorders `v`.
pub fn median(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of nothing");
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson correlation of |t| over the voxels inside `mask` (> 0.5).
pub fn tmap_correlation(a: &TMap, b: &TMap, mask: Option<&Volume3D>) -> Result<f64> {
    a.vol.grid().ensure_same(b.vol.grid(), "t-maps")?;
    if let Some(m) = mask {
        a.vol.grid().ensure_same(m.grid(), "correlation mask")?;
    }
    let pairs: Vec<(f64, f64)> = (0..a.vol.len())
        .filter(|&i| in_mask(mask, i))
        .map(|i| (a.vol.data()[i].abs(), b.vol.data()[i].abs()))
        .collect();
    pearson(&pairs)
}

fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Binary map of `|t| > t_crit` for a two-sided test at level `p`.
pub fn threshold_tmap(t: &TMap, p: f64) -> Result<Volume3D> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} not in (0, 1)")));
    }
    if t.dof == 0 {
        return Err(Error::InvalidArgument("t-map has zero degrees of freedom".into()));
    }
    let crit = tdist::t_critical(p, t.dof as f64);
    t.vol.map(|v| if v.abs() > crit { 1.0 } else { 0.0 })
}
