use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point, PointCloud, IGNORE_LABEL};
use crate::scalar::Real;

/// Integer cell `floor(p / cell_size)` per axis, computed on raw coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey(pub [i64; 3]);

impl VoxelKey {
    #[inline]
    pub fn of<T: Real>(p: &Point<T>, cell_size: T) -> Self {
        VoxelKey([
            (p[0] / cell_size).floor().to_i64().unwrap_or(i64::MAX),
            (p[1] / cell_size).floor().to_i64().unwrap_or(i64::MAX),
            (p[2] / cell_size).floor().to_i64().unwrap_or(i64::MAX),
        ])
    }
}

/// How per-point class information is reduced inside a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    /// Labels by majority vote; probability rows are dropped.
    #[default]
    Majority,
    /// Labels by majority vote and probability rows averaged.
    KeepProbs,
}

/// Majority label of a group, ignoring [`IGNORE_LABEL`]. Ties go to the
/// smallest class id; a group with only ignored labels stays ignored.
pub(crate) fn majority_label(labels: impl IntoIterator<Item = i32>) -> i32 {
    let mut counts: Vec<(i32, usize)> = Vec::new();
    for l in labels {
        if l == IGNORE_LABEL {
            continue;
        }
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(IGNORE_LABEL, |(c, _)| c)
}

/// Groups point indices by voxel, in order of first occupancy.
pub(crate) fn voxel_groups<T: Real>(positions: &[Point<T>], cell_size: T) -> (Vec<VoxelKey>, Vec<usize>) {
    let mut slot: HashMap<VoxelKey, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut mapping = Vec::with_capacity(positions.len());
    for p in positions {
        let key = VoxelKey::of(p, cell_size);
        let next = keys.len();
        let s = *slot.entry(key).or_insert_with(|| {
            keys.push(key);
            next
        });
        mapping.push(s);
    }
    (keys, mapping)
}

/// Voxel-grid subsampling.
///
/// Returns one point per occupied voxel (ordered by the first input point that
/// falls into it) and `mapping[i]`, the output index of input point `i`.
/// Positions and features are averaged, labels majority-voted.
pub fn grid_subsample<T: Real>(
    cloud: &PointCloud<T>,
    cell_size: T,
    label_mode: LabelMode,
) -> Result<(PointCloud<T>, Vec<usize>)> {
    if !(cell_size > T::zero()) || !cell_size.is_finite() {
        return Err(Error::param(format!("cell size must be positive, got {cell_size}")));
    }
    if cloud.is_empty() {
        return Ok((PointCloud::empty(), Vec::new()));
    }
    let (keys, mapping) = voxel_groups(cloud.positions(), cell_size);
    let m = keys.len();

    let mut counts = vec![0usize; m];
    let mut sums = vec![[T::zero(); 3]; m];
    for (p, &s) in cloud.positions().iter().zip(&mapping) {
        counts[s] += 1;
        for d in 0..3 {
            sums[s][d] += p[d];
        }
    }
    let denom: Vec<T> = counts.iter().map(|&c| T::from_usize(c).unwrap()).collect();
    let positions = sums
        .iter()
        .zip(&denom)
        .map(|(s, &n)| [s[0] / n, s[1] / n, s[2] / n])
        .collect();
    let mut out = PointCloud::new(positions)?;

    let mean_rows = |src: &Array2<T>| {
        let mut acc = Array2::<T>::zeros((m, src.ncols()));
        for (i, &s) in mapping.iter().enumerate() {
            let mut row = acc.row_mut(s);
            row += &src.row(i);
        }
        for (s, mut row) in acc.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v / denom[s]);
        }
        acc
    };

    if let Some(f) = cloud.features() {
        out = out.with_features(mean_rows(f))?;
    }
    if let Some(labels) = cloud.labels() {
        let mut members: Vec<Vec<i32>> = vec![Vec::new(); m];
        for (&l, &s) in labels.iter().zip(&mapping) {
            members[s].push(l);
        }
        out = out.with_labels(members.into_iter().map(majority_label).collect())?;
    }
    if label_mode == LabelMode::KeepProbs {
        if let Some(p) = cloud.prob() {
            out = out.with_prob(mean_rows(p))?;
        }
    }
    Ok((out, mapping))
}

/// All indices with `‖p − center‖ ≤ r`, ascending. Linear scan; use
/// [`HashGrid`] when many balls are queried against the same cloud.
pub fn sphere_query<T: Real>(positions: &[Point<T>], center: &Point<T>, r: T) -> Result<Vec<usize>> {
    if !(r > T::zero()) {
        return Err(Error::param(format!("radius must be positive, got {r}")));
    }
    let r2 = r * r;
    Ok(positions
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, center) <= r2)
        .map(|(i, _)| i)
        .collect())
}

/// Uniform hash grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct HashGrid<'a, T: Real> {
    positions: &'a [Point<T>],
    cell_size: T,
    cells: HashMap<VoxelKey, Vec<usize>>,
}

impl<'a, T: Real> HashGrid<'a, T> {
    pub fn new(positions: &'a [Point<T>], cell_size: T) -> Result<Self> {
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::param(format!("cell size must be positive, got {cell_size}")));
        }
        let mut cells: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells.entry(VoxelKey::of(p, cell_size)).or_default().push(i);
        }
        Ok(Self {
            positions,
            cell_size,
            cells,
        })
    }

    pub fn positions(&self) -> &'a [Point<T>] {
        self.positions
    }

    pub fn cell_size(&self) -> T {
        self.cell_size
    }

    /// Calls `visit(index, squared_distance)` for every point within `r` of
    /// `center`. Visiting order is unspecified.
    pub fn for_each_within(&self, center: &Point<T>, r: T, mut visit: impl FnMut(usize, T)) {
        let r2 = r * r;
        // widen by a few ulps so rounding in `center ± r` never drops a boundary cell
        let slack = |c: T| r + (c.abs() + r) * T::epsilon() * T::lit(8.0);
        let lo = VoxelKey::of(&std::array::from_fn(|d| center[d] - slack(center[d])), self.cell_size).0;
        let hi = VoxelKey::of(&std::array::from_fn(|d| center[d] + slack(center[d])), self.cell_size).0;
        let span = (0..3).map(|d| (hi[d] - lo[d] + 1) as u128).product::<u128>();
        if span > self.cells.len() as u128 {
            // the ball covers more cells than are occupied
            for (key, members) in &self.cells {
                if (0..3).all(|d| key.0[d] >= lo[d] && key.0[d] <= hi[d]) {
                    self.visit_members(members, center, r2, &mut visit);
                }
            }
            return;
        }
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(members) = self.cells.get(&VoxelKey([i, j, k])) {
                        self.visit_members(members, center, r2, &mut visit);
                    }
                }
            }
        }
    }

    #[inline]
    fn visit_members(&self, members: &[usize], center: &Point<T>, r2: T, visit: &mut impl FnMut(usize, T)) {
        for &idx in members {
            let d2 = dist2(&self.positions[idx], center);
            if d2 <= r2 {
                visit(idx, d2);
            }
        }
    }

    /// Ball query, ascending indices.
    pub fn query_ball(&self, center: &Point<T>, r: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(center, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn is_occupied(&self, center: &Point<T>, r: T) -> bool {
        let mut hit = false;
        self.for_each_within(center, r, |_, _| hit = true);
        hit
    }
}
