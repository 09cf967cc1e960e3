//! Patch tiling for patch-wise prediction.
//!
//! A regular grid of boxes is shrunk greedily towards the image centre while
//! every tissue voxel of a mask corpus stays covered. Boxes mirrored about
//! the mid-sagittal plane move in lockstep.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{Grid, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchBox {
    pub corner: [usize; 3],
    pub size: [usize; 3],
}

impl PatchBox {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.corner[a] && p[a] < self.corner[a] + self.size[a])
    }

    /// Box centre along `axis` in voxel coordinates.
    pub fn center(&self, axis: usize) -> f64 {
        self.corner[axis] as f64 + (self.size[axis] as f64 - 1.0) / 2.0
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.size[a] > 0 && self.corner[a] + self.size[a] <= dims[a])
    }

    /// Mirror image about the mid-sagittal plane of a grid with width `nx`.
    pub fn mirrored(&self, nx: usize) -> PatchBox {
        let mut m = *self;
        m.corner[0] = nx - self.size[0] - self.corner[0];
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub dims: [usize; 3],
    pub boxes: Vec<PatchBox>,
    /// `(left, right)` box indices; `right` is the sagittal mirror of `left`.
    pub mirror_pairs: Vec<(usize, usize)>,
    /// Boxes on the mid-sagittal column, moving without a partner.
    pub center_indices: Vec<usize>,
}

impl PatchLayout {
    /// Regular `grid` tiling of `dims` with boxes of `patch_size`.
    pub fn regular(dims: [usize; 3], grid: [usize; 3], patch_size: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if grid[a] == 0 || patch_size[a] == 0 || patch_size[a] > dims[a] {
                return Err(Error::InvalidArgument(format!(
                    "axis {a}: grid {} patch {} dims {}",
                    grid[a], patch_size[a], dims[a]
                )));
            }
            if grid[a] * patch_size[a] < dims[a] {
                return Err(Error::InvalidArgument(format!(
                    "axis {a}: {} patches of {} cannot tile {} voxels",
                    grid[a], patch_size[a], dims[a]
                )));
            }
        }
        // per-axis corners for each grid index; x corners mirrored exactly
        let axis_corners = |a: usize| -> Vec<usize> {
            let g = grid[a];
            let span = dims[a] - patch_size[a];
            if g == 1 {
                return vec![span / 2];
            }
            let mut c: Vec<usize> = (0..g).map(|i| i * span / (g - 1)).collect();
            if a == 0 {
                for i in 0..g / 2 {
                    c[g - 1 - i] = span - c[i];
                }
                if g % 2 == 1 {
                    c[g / 2] = span / 2;
                }
            }
            c
        };
        let cx = axis_corners(0);
        let cy = axis_corners(1);
        let cz = axis_corners(2);
        let mut boxes = Vec::with_capacity(grid.iter().product());
        let mut mirror_pairs = Vec::new();
        let mut center_indices = Vec::new();
        for iz in 0..grid[2] {
            for iy in 0..grid[1] {
                for ix in 0..grid[0] {
                    let idx = ix + grid[0] * (iy + grid[1] * iz);
                    boxes.push(PatchBox {
                        corner: [cx[ix], cy[iy], cz[iz]],
                        size: patch_size,
                    });
                    let mx = grid[0] - 1 - ix;
                    if mx == ix {
                        center_indices.push(idx);
                    } else if ix < mx {
                        mirror_pairs.push((idx, mx + grid[0] * (iy + grid[1] * iz)));
                    }
                }
            }
        }
        Ok(Self {
            dims,
            boxes,
            mirror_pairs,
            center_indices,
        })
    }

    pub fn partner(&self, idx: usize) -> Option<usize> {
        self.mirror_pairs.iter().find_map(|&(l, r)| {
            if l == idx {
                Some(r)
            } else if r == idx {
                Some(l)
            } else {
                None
            }
        })
    }

    pub fn covers(&self, p: [usize; 3]) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    /// Number of boxes containing each voxel.
    pub fn coverage_counts(&self) -> Vec<u16> {
        let grid = Grid::unit(self.dims);
        let mut counts = vec![0u16; grid.len()];
        for b in &self.boxes {
            for_each_voxel(b, |p| counts[grid.index(p[0], p[1], p[2])] += 1);
        }
        counts
    }

    /// Serializes as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [a, b, c] = self.dims;
        writeln!(s, "dims = {a} {b} {c}").unwrap();
        writeln!(s, "count = {}", self.boxes.len()).unwrap();
        for (i, bx) in self.boxes.iter().enumerate() {
            let [x, y, z] = bx.corner;
            let [sx, sy, sz] = bx.size;
            writeln!(s, "patch.{i}.corner = {x} {y} {z}").unwrap();
            writeln!(s, "patch.{i}.size = {sx} {sy} {sz}").unwrap();
        }
        for (l, r) in &self.mirror_pairs {
            writeln!(s, "pair = {l} {r}").unwrap();
        }
        for c in &self.center_indices {
            writeln!(s, "center = {c}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        fn nums<T: FromStr>(v: &str, n: usize, line: usize) -> Result<Vec<T>> {
            let out: Vec<T> = v
                .split_whitespace()
                .map(|t| t.parse::<T>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::ConfigInvalid(format!("layout line {line}: bad number")))?;
            if out.len() != n {
                return Err(Error::ConfigInvalid(format!(
                    "layout line {line}: expected {n} values"
                )));
            }
            Ok(out)
        }
        let mut dims = None;
        let mut boxes: Vec<(Option<[usize; 3]>, Option<[usize; 3]>)> = Vec::new();
        let mut mirror_pairs = Vec::new();
        let mut center_indices = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::ConfigInvalid(format!("layout line {}: no '='", ln + 1)))?;
            match key {
                "dims" => {
                    let v = nums::<usize>(value, 3, ln + 1)?;
                    dims = Some([v[0], v[1], v[2]]);
                }
                "count" => {
                    let n = nums::<usize>(value, 1, ln + 1)?[0];
                    boxes.resize(n, (None, None));
                }
                "pair" => {
                    let v = nums::<usize>(value, 2, ln + 1)?;
                    mirror_pairs.push((v[0], v[1]));
                }
                "center" => center_indices.push(nums::<usize>(value, 1, ln + 1)?[0]),
                k if k.starts_with("patch.") => {
                    let mut parts = k.split('.');
                    let _ = parts.next();
                    let i: usize = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| Error::ConfigInvalid(format!("layout key {k}")))?;
                    if i >= boxes.len() {
                        boxes.resize(i + 1, (None, None));
                    }
                    let v = nums::<usize>(value, 3, ln + 1)?;
                    let arr = [v[0], v[1], v[2]];
                    match parts.next() {
                        Some("corner") => boxes[i].0 = Some(arr),
                        Some("size") => boxes[i].1 = Some(arr),
                        _ => return Err(Error::ConfigInvalid(format!("layout key {k}"))),
                    }
                }
                other => return Err(Error::ConfigInvalid(format!("unknown layout key {other}"))),
            }
        }
        let dims = dims.ok_or_else(|| Error::ConfigInvalid("layout missing dims".into()))?;
        let boxes = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| match b {
                (Some(corner), Some(size)) => {
                    let bx = PatchBox { corner, size };
                    if bx.fits(dims) {
                        Ok(bx)
                    } else {
                        Err(Error::ConfigInvalid(format!("patch {i} outside image")))
                    }
                }
                _ => Err(Error::ConfigInvalid(format!("patch {i} incomplete"))),
            })
            .collect::<Result<Vec<_>>>()?;
        for &(l, r) in &mirror_pairs {
            if l >= boxes.len() || r >= boxes.len() {
                return Err(Error::ConfigInvalid("pair index out of range".into()));
            }
        }
        Ok(Self {
            dims,
            boxes,
            mirror_pairs,
            center_indices,
        })
    }
}

fn for_each_voxel(b: &PatchBox, mut f: impl FnMut([usize; 3])) {
    for z in b.corner[2]..b.corner[2] + b.size[2] {
        for y in b.corner[1]..b.corner[1] + b.size[1] {
            for x in b.corner[0]..b.corner[0] + b.size[0] {
                f([x, y, z]);
            }
        }
    }
}

/// Slab of `b` along `axis` at coordinate `at` (voxels leaving or entering).
fn for_each_in_slab(b: &PatchBox, axis: usize, at: usize, mut f: impl FnMut([usize; 3])) {
    let mut lo = b.corner;
    let mut hi = [
        b.corner[0] + b.size[0],
        b.corner[1] + b.size[1],
        b.corner[2] + b.size[2],
    ];
    lo[axis] = at;
    hi[axis] = at + 1;
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                f([x, y, z]);
            }
        }
    }
}

/// Coverage bookkeeping for the greedy shrink.
struct Coverage<'a> {
    grid: Grid,
    tissue: &'a [bool],
    counts: Vec<u16>,
}

impl Coverage<'_> {
    /// Moves `b` one voxel along `axis` in direction `dir`.
    /// Returns the voxels whose count dropped to zero while holding tissue.
    fn shift(&mut self, b: &mut PatchBox, axis: usize, dir: i64) -> usize {
        let (leave, enter) = if dir > 0 {
            (b.corner[axis], b.corner[axis] + b.size[axis])
        } else {
            (b.corner[axis] + b.size[axis] - 1, b.corner[axis] - 1)
        };
        let mut lost = 0;
        let grid = &self.grid;
        for_each_in_slab(b, axis, enter, |p| {
            self.counts[grid.index(p[0], p[1], p[2])] += 1;
        });
        for_each_in_slab(b, axis, leave, |p| {
            let i = grid.index(p[0], p[1], p[2]);
            self.counts[i] -= 1;
            if self.counts[i] == 0 && self.tissue[i] {
                lost += 1;
            }
        });
        if dir > 0 {
            b.corner[axis] += 1;
        } else {
            b.corner[axis] -= 1;
        }
        lost
    }

    fn uncovered_tissue(&self) -> usize {
        self.counts
            .iter()
            .zip(self.tissue)
            .filter(|(&c, &t)| t && c == 0)
            .count()
    }
}

/// Direction (+1/-1) moving `b` strictly closer to the image centre along
/// `axis`, or `None` when it is already centred.
fn step_toward_center(b: &PatchBox, axis: usize, dims: [usize; 3]) -> Option<i64> {
    let diff = (dims[axis] as f64 - 1.0) / 2.0 - b.center(axis);
    if diff >= 1.0 {
        Some(1)
    } else if diff <= -1.0 {
        Some(-1)
    } else {
        None
    }
}

/// Greedy shrink of a regular patch grid over the union of `masks`.
///
/// Boxes are visited in index order and axes in x, y, z order; a one-voxel
/// move towards the centre is kept only if coverage survives. Mirror pairs
/// move together (opposite directions along x). Repeats until a full pass
/// makes no move.
pub fn optimize_layout(
    masks: &[Volume3D],
    grid: [usize; 3],
    patch_size: [usize; 3],
) -> Result<PatchLayout> {
    let dims = match masks.first() {
        Some(m) => m.dims(),
        None => return Err(Error::InvalidArgument("no masks supplied".into())),
    };
    for m in masks {
        masks[0].grid().ensure_same(m.grid(), "mask corpus")?;
    }
    let mut layout = PatchLayout::regular(dims, grid, patch_size)?;
    let n = masks[0].len();
    let tissue: Vec<bool> = (0..n)
        .map(|i| masks.iter().any(|m| m.data()[i] > 0.5))
        .collect();
    let mut cov = Coverage {
        grid: Grid::unit(dims),
        tissue: &tissue,
        counts: layout.coverage_counts(),
    };
    let uncovered = cov.uncovered_tissue();
    if uncovered > 0 {
        return Err(Error::CoverageImpossible { uncovered });
    }
    let partner_of: Vec<Option<usize>> = (0..layout.boxes.len()).map(|i| layout.partner(i)).collect();
    let is_right = |i: usize| layout.mirror_pairs.iter().any(|&(_, r)| r == i);
    let rights: Vec<bool> = (0..layout.boxes.len()).map(is_right).collect();

    loop {
        let mut moved = false;
        for i in 0..layout.boxes.len() {
            if rights[i] {
                continue;
            }
            for axis in 0..3 {
                let Some(dir) = step_toward_center(&layout.boxes[i], axis, dims) else {
                    continue;
                };
                let mut bi = layout.boxes[i];
                let mut lost = cov.shift(&mut bi, axis, dir);
                let mut pj = None;
                if let Some(j) = partner_of[i] {
                    let mut bj = layout.boxes[j];
                    let pdir = if axis == 0 { -dir } else { dir };
                    lost += cov.shift(&mut bj, axis, pdir);
                    // a voxel lost by one box may be regained by the partner
                    pj = Some((j, bj, pdir));
                }
                let ok = if pj.is_some() {
                    // recount the two leaving slabs against the final counts
                    let mut bad = 0;
                    let grid = &cov.grid;
                    let check = |b: &PatchBox, axis: usize, dir: i64, bad: &mut usize| {
                        let leave = if dir > 0 {
                            b.corner[axis] - 1
                        } else {
                            b.corner[axis] + b.size[axis]
                        };
                        for_each_in_slab(b, axis, leave, |p| {
                            let k = grid.index(p[0], p[1], p[2]);
                            if cov.counts[k] == 0 && tissue[k] {
                                *bad += 1;
                            }
                        });
                    };
                    check(&bi, axis, dir, &mut bad);
                    let (_, bj, pdir) = pj.as_ref().unwrap();
                    check(bj, axis, *pdir, &mut bad);
                    bad == 0
                } else {
                    lost == 0
                };
                if ok {
                    layout.boxes[i] = bi;
                    if let Some((j, bj, _)) = pj {
                        layout.boxes[j] = bj;
                    }
                    moved = true;
                } else {
                    // undo in reverse order
                    if let Some((_, mut bj, pdir)) = pj {
                        cov.shift(&mut bj, axis, -pdir);
                    }
                    cov.shift(&mut bi, axis, -dir);
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(layout)
}

/// Reverses the x (sagittal) axis.
pub fn flip_sagittal(vol: &Volume3D) -> Volume3D {
    let [nx, _, _] = vol.dims();
    let mut data = vol.data().to_vec();
    for row in data.chunks_exact_mut(nx) {
        row.reverse();
    }
    vol.with_data(data).expect("permutation keeps values finite")
}

/// Default σ as a fraction of the patch extent.
pub const DEFAULT_SIGMA_SCALE: f64 = 1.0 / 8.0;

/// Separable Gaussian centred on the patch, peak 1, `σ_a = sigma_scale · size_a`.
pub fn gaussian_importance_weights(size: [usize; 3], sigma_scale: f64) -> Result<Volume3D> {
    if !(sigma_scale.is_finite() && sigma_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_scale {sigma_scale}")));
    }
    let grid = Grid::new(size, [1.0; 3], {
        let mut m = nalgebra::Matrix4::identity();
        m[(3, 3)] = 1.0;
        m
    })?;
    let profile = |a: usize| -> Vec<f64> {
        let c = (size[a] as f64 - 1.0) / 2.0;
        let s = sigma_scale * size[a] as f64;
        (0..size[a])
            .map(|i| {
                let d = i as f64 - c;
                // floor keeps weights strictly positive at the corners
                (-(d * d) / (2.0 * s * s)).exp().max(f64::MIN_POSITIVE)
            })
            .collect()
    };
    let (px, py, pz) = (profile(0), profile(1), profile(2));
    Volume3D::from_fn(grid, |x, y, z| px[x] * py[y] * pz[z])
}

#[derive(Debug, Clone)]
pub struct Accumulated {
    pub volume: Volume3D,
    /// Voxels covered by no patch (set to 0).
    pub uncovered_voxels: usize,
}

/// Importance-weighted mean of overlapping patch predictions.
pub fn accumulate_patches(
    patches: &[(PatchBox, Volume3D)],
    weights: &Volume3D,
    out_dims: [usize; 3],
) -> Result<Accumulated> {
    let grid = Grid::unit(out_dims);
    let mut num = vec![0.0; grid.len()];
    let mut den = vec![0.0; grid.len()];
    for (k, (b, pred)) in patches.iter().enumerate() {
        if pred.dims() != b.size || weights.dims() != b.size {
            return Err(Error::GeometryMismatch(format!(
                "patch {k}: prediction {:?}, weights {:?}, box {:?}",
                pred.dims(),
                weights.dims(),
                b.size
            )));
        }
        if !b.fits(out_dims) {
            return Err(Error::GeometryMismatch(format!("patch {k} outside output")));
        }
        let pg = pred.grid();
        for_each_voxel(b, |p| {
            let local = pg.index(p[0] - b.corner[0], p[1] - b.corner[1], p[2] - b.corner[2]);
            let w = weights.data()[local];
            let o = grid.index(p[0], p[1], p[2]);
            num[o] += w * pred.data()[local];
            den[o] += w;
        });
    }
    let mut uncovered = 0;
    let data: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| {
            if d > 0.0 {
                n / d
            } else {
                uncovered += 1;
                0.0
            }
        })
        .collect();
    if uncovered > 0 {
        log::warn!("{uncovered} voxels not covered by any patch");
    }
    Ok(Accumulated {
        volume: Volume3D::new(grid, data)?,
        uncovered_voxels: uncovered,
    })
}

/// Extracts the sub-volume under `b`.
pub fn extract_patch(vol: &Volume3D, b: &PatchBox) -> Result<Volume3D> {
    if !b.fits(vol.dims()) {
        return Err(Error::GeometryMismatch("patch outside volume".into()));
    }
    let g = Grid::unit(b.size);
    Volume3D::from_fn(g, |x, y, z| {
        vol.get(x + b.corner[0], y + b.corner[1], z + b.corner[2])
    })
}
