//! Sphere-based training and inference protocol for large scenes.
//!
//! Training draws sphere centers with a probability inversely proportional to
//! the square root of the center's class frequency. Inference tiles the scene
//! once with spheres on a regular grid, averages the class probabilities of
//! points seen by several spheres, and projects the result back to the full
//! resolution cloud by nearest-neighbour lookup. Several augmented inference
//! runs can be averaged ("voting") before taking the argmax.

use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, IGNORE_LABEL};
use crate::scalar::Real;
use crate::spatial::{knn_search, HashGrid};

/// Sphere radius used for both training and inference regions, meters.
pub const DEFAULT_SPHERE_RADIUS: f64 = 2.0;
/// Training spheres drawn per epoch.
pub const DEFAULT_SPHERES_PER_EPOCH: usize = 3000;
/// Inference grid spacing, meters.
pub const DEFAULT_GRID_SPACING: f64 = 2.0;

/// A ball and the host-cloud indices inside it (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRegion<T: Real> {
    pub center: Point<T>,
    pub radius: T,
    pub members: Vec<usize>,
}

/// Per-point sampling weights `1 / sqrt(count(c) / N_valid)`; zero for
/// ignored points. Not normalized.
pub fn class_balanced_weights<T: Real>(labels: &[i32], num_classes: usize) -> Result<Vec<T>> {
    let mut counts = vec![0usize; num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE_LABEL {
            continue;
        }
        if l < 0 || l as usize >= num_classes {
            return Err(Error::param(format!("label {l} at {i} outside [-1, {num_classes})")));
        }
        counts[l as usize] += 1;
    }
    let valid: usize = counts.iter().sum();
    if valid == 0 {
        return Err(Error::param("every label is ignored; class weights are undefined"));
    }
    let n_valid = T::from_usize(valid).unwrap();
    let class_weight: Vec<T> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                T::zero()
            } else {
                T::one() / (T::from_usize(c).unwrap() / n_valid).sqrt()
            }
        })
        .collect();
    Ok(labels
        .iter()
        .map(|&l| if l == IGNORE_LABEL { T::zero() } else { class_weight[l as usize] })
        .collect())
}

/// Draws training spheres from a fixed labeled cloud.
///
/// Building the sampler indexes the cloud once; each [`sample`](Self::sample)
/// call is then cheap, so per-batch sampling with independent RNG streams is
/// practical.
#[derive(Debug)]
pub struct SphereSampler<'a, T: Real> {
    grid: HashGrid<'a, T>,
    radius: T,
    centers: WeightedIndex<f64>,
}

impl<'a, T: Real> SphereSampler<'a, T> {
    pub fn new(cloud: &'a PointCloud<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::param(format!("sphere radius must be positive, got {radius}")));
        }
        let labels = cloud
            .labels()
            .ok_or_else(|| Error::param("training spheres need a labeled cloud"))?;
        let num_classes = labels.iter().copied().max().map_or(0, |m| (m.max(-1) + 1) as usize);
        let weights: Vec<f64> = class_balanced_weights::<T>(labels, num_classes)?
            .into_iter()
            .map(Real::as_f64)
            .collect();
        let centers = WeightedIndex::new(&weights).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self {
            grid: HashGrid::new(cloud.positions(), radius)?,
            radius,
            centers,
        })
    }

    /// Index of a center point, drawn by class-balanced weight.
    pub fn draw_center<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.centers.sample(rng)
    }

    /// The sphere around host point `center_index`.
    pub fn region(&self, center_index: usize) -> SphereRegion<T> {
        let center = self.grid.positions()[center_index];
        SphereRegion {
            center,
            radius: self.radius,
            members: self.grid.query_ball(&center, self.radius),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<SphereRegion<T>> {
        (0..count).map(|_| self.region(self.draw_center(rng))).collect()
    }
}

/// `count` spheres centered on points drawn with replacement by
/// [`class_balanced_weights`].
pub fn sample_training_spheres<T: Real, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    radius: T,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SphereRegion<T>>> {
    if count == 0 {
        return Err(Error::param("sphere count must be at least 1"));
    }
    Ok(SphereSampler::new(cloud, radius)?.sample(count, rng))
}

/// Grid nodes `min + spacing·(i, j, k)` covering the bounding box, keeping only
/// nodes whose sphere of `radius` contains at least one point.
pub fn inference_grid_centers<T: Real>(positions: &[Point<T>], radius: T, spacing: T) -> Result<Vec<Point<T>>> {
    if !(radius > T::zero()) || !(spacing > T::zero()) {
        return Err(Error::param("radius and spacing must be positive"));
    }
    let Some(first) = positions.first() else {
        return Ok(Vec::new());
    };
    let (lo, hi) = positions.iter().fold((*first, *first), |(mut lo, mut hi), p| {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
        (lo, hi)
    });
    let steps: [usize; 3] = std::array::from_fn(|d| {
        let mut k = ((hi[d] - lo[d]) / spacing).ceil().to_usize().unwrap_or(0);
        // rounding in lo + k·spacing must not stop short of the max corner
        while lo[d] + T::from_usize(k).unwrap() * spacing < hi[d] {
            k += 1;
        }
        k
    });
    let grid = HashGrid::new(positions, radius)?;
    let mut centers = Vec::new();
    for i in 0..=steps[0] {
        for j in 0..=steps[1] {
            for k in 0..=steps[2] {
                let c = [
                    lo[0] + T::from_usize(i).unwrap() * spacing,
                    lo[1] + T::from_usize(j).unwrap() * spacing,
                    lo[2] + T::from_usize(k).unwrap() * spacing,
                ];
                if grid.is_occupied(&c, radius) {
                    centers.push(c);
                }
            }
        }
    }
    Ok(centers)
}

/// Inference regions: one sphere per [`inference_grid_centers`] node.
pub fn inference_regions<T: Real>(positions: &[Point<T>], radius: T, spacing: T) -> Result<Vec<SphereRegion<T>>> {
    let centers = inference_grid_centers(positions, radius, spacing)?;
    let grid = HashGrid::new(positions, radius)?;
    Ok(centers
        .into_iter()
        .map(|center| SphereRegion {
            center,
            radius,
            members: grid.query_ball(&center, radius),
        })
        .collect())
}

/// Class-probability rows produced for each region, aligned with its members.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet<T: Real> {
    pub rows: Vec<Array2<T>>,
    pub num_points: usize,
    pub num_classes: usize,
}

/// Per-point probabilities after averaging over covering regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPrediction<T: Real> {
    pub prob: Array2<T>,
    /// `false` for points no region covered; their row is uniform.
    pub covered: Vec<bool>,
}

impl<T: Real> AggregatedPrediction<T> {
    pub fn uncovered_count(&self) -> usize {
        self.covered.iter().filter(|c| !**c).count()
    }
}

pub fn aggregate_sphere_predictions<T: Real>(
    regions: &[SphereRegion<T>],
    preds: &PredictionSet<T>,
) -> Result<AggregatedPrediction<T>> {
    let (n, c) = (preds.num_points, preds.num_classes);
    if c == 0 {
        return Err(Error::param("prediction set has no classes"));
    }
    if regions.len() != preds.rows.len() {
        return Err(Error::shape(format!(
            "{} regions but {} prediction blocks",
            regions.len(),
            preds.rows.len()
        )));
    }
    let mut sum = Array2::<T>::zeros((n, c));
    let mut hits = vec![0usize; n];
    for (r, (region, rows)) in regions.iter().zip(&preds.rows).enumerate() {
        if rows.nrows() != region.members.len() || rows.ncols() != c {
            return Err(Error::shape(format!(
                "region {r}: prediction block is {}x{}, expected {}x{c}",
                rows.nrows(),
                rows.ncols(),
                region.members.len()
            )));
        }
        for (&m, row) in region.members.iter().zip(rows.axis_iter(Axis(0))) {
            if m >= n {
                return Err(Error::shape(format!("region {r}: member {m} outside cloud of {n} points")));
            }
            let mut acc = sum.row_mut(m);
            acc += &row;
            hits[m] += 1;
        }
    }
    let uniform = T::one() / T::from_usize(c).unwrap();
    for (i, mut row) in sum.axis_iter_mut(Axis(0)).enumerate() {
        if hits[i] == 0 {
            row.fill(uniform);
        } else {
            let k = T::from_usize(hits[i]).unwrap();
            row.mapv_inplace(|v| v / k);
        }
    }
    let covered: Vec<bool> = hits.iter().map(|&h| h > 0).collect();
    let missing = covered.iter().filter(|c| !**c).count();
    if missing > 0 {
        log::warn!("{missing} of {n} points are not covered by any region; assigning uniform probabilities");
    }
    Ok(AggregatedPrediction { prob: sum, covered })
}

/// Row-wise argmax; ties go to the smallest class id.
pub fn argmax_rows<T: Real>(prob: &Array2<T>) -> Vec<i32> {
    prob.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as i32
        })
        .collect()
}

/// Labels every full-resolution point with the argmax class of its nearest
/// subsampled point.
pub fn project_full_resolution<T: Real>(sub: &PointCloud<T>, full_positions: &[Point<T>]) -> Result<Vec<i32>> {
    if sub.is_empty() {
        return Err(Error::param("cannot project from an empty cloud"));
    }
    let prob = sub
        .prob()
        .ok_or_else(|| Error::param("subsampled cloud carries no probabilities"))?;
    let sub_labels = argmax_rows(prob);
    let nn = knn_search(sub.positions(), full_positions, 1)?;
    Ok((0..full_positions.len()).map(|q| sub_labels[nn.row(q)[0]]).collect())
}

/// Elementwise mean of several runs' `N × C` probabilities.
pub fn vote_average<T: Real>(runs: &[Array2<T>]) -> Result<Array2<T>> {
    let first = runs.first().ok_or_else(|| Error::param("no runs to average"))?;
    if let Some(r) = runs.iter().position(|r| r.dim() != first.dim()) {
        return Err(Error::shape(format!(
            "run {r} has shape {:?}, run 0 has {:?}",
            runs[r].dim(),
            first.dim()
        )));
    }
    let mut acc = first.clone();
    for r in &runs[1..] {
        acc += r;
    }
    let k = T::from_usize(runs.len()).unwrap();
    acc.mapv_inplace(|v| v / k);
    Ok(acc)
}
