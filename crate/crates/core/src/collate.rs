//! Batch layouts: dense tensors, concatenation with a batch vector, and
//! deduplicated integer voxel coordinates.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, IGNORE_LABEL};
use crate::scalar::Real;
use crate::spatial::{majority_label, voxel_groups, VoxelKey};
use crate::transforms::fixed_points;

/// Which layout a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvType {
    Dense,
    PartialDense,
    Sparse,
}

impl std::str::FromStr for ConvType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DENSE" => Ok(ConvType::Dense),
            "PARTIAL_DENSE" => Ok(ConvType::PartialDense),
            "SPARSE" => Ok(ConvType::Sparse),
            other => Err(Error::param(format!("unsupported conv_type `{other}`"))),
        }
    }
}

fn check_feature_dims<T: Real>(clouds: &[PointCloud<T>]) -> Result<Option<usize>> {
    let first = clouds[0].features().map(|f| f.ncols());
    for (b, c) in clouds.iter().enumerate() {
        let dim = c.features().map(|f| f.ncols());
        if dim != first {
            return Err(Error::shape(format!(
                "instance {b} has feature dimension {dim:?}, instance 0 has {first:?}"
            )));
        }
    }
    Ok(first)
}

/// `B × N × (3 + F)` tensor with positions in the first three columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBatch<T: Real> {
    pub data: Array3<T>,
    /// `B × N`, [`IGNORE_LABEL`] where an instance carried no labels.
    pub labels: Array2<i32>,
}

/// Resamples every instance to `n` points and stacks them.
pub fn collate_dense<T: Real, R: Rng + ?Sized>(clouds: &[PointCloud<T>], n: usize, rng: &mut R) -> Result<DenseBatch<T>> {
    if clouds.is_empty() {
        return Err(Error::param("cannot collate an empty list"));
    }
    let f = check_feature_dims(clouds)?.unwrap_or(0);
    let b = clouds.len();
    let mut data = Array3::<T>::zeros((b, n, 3 + f));
    let mut labels = Array2::<i32>::from_elem((b, n), IGNORE_LABEL);
    for (i, cloud) in clouds.iter().enumerate() {
        let sampled = fixed_points(cloud, n, rng)?;
        let mut slab = data.index_axis_mut(Axis(0), i);
        for (j, p) in sampled.positions().iter().enumerate() {
            slab[(j, 0)] = p[0];
            slab[(j, 1)] = p[1];
            slab[(j, 2)] = p[2];
        }
        if let Some(feat) = sampled.features() {
            slab.slice_mut(s![.., 3..]).assign(feat);
        }
        if let Some(l) = sampled.labels() {
            labels.row_mut(i).assign(&ndarray::ArrayView1::from(l));
        }
    }
    Ok(DenseBatch { data, labels })
}

/// Instances concatenated along the point axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDenseBatch<T: Real> {
    pub positions: Vec<Point<T>>,
    pub features: Option<Array2<T>>,
    pub labels: Option<Vec<i32>>,
    /// Instance id of every row; non-decreasing from 0 to `B − 1`.
    pub batch: Vec<usize>,
    /// `B + 1` row offsets, instance `b` spans `offsets[b]..offsets[b + 1]`.
    pub offsets: Vec<usize>,
}

impl<T: Real> PartialDenseBatch<T> {
    pub fn num_instances(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Rebuilds instance `b` as a standalone cloud.
    pub fn instance(&self, b: usize) -> Result<PointCloud<T>> {
        let (lo, hi) = (self.offsets[b], self.offsets[b + 1]);
        let mut cloud = PointCloud::new(self.positions[lo..hi].to_vec())?;
        if let Some(f) = &self.features {
            cloud = cloud.with_features(f.slice(s![lo..hi, ..]).to_owned())?;
        }
        if let Some(l) = &self.labels {
            cloud = cloud.with_labels(l[lo..hi].to_vec())?;
        }
        Ok(cloud)
    }
}

/// Concatenates instances in input order. Probability rows are not carried.
pub fn collate_partial_dense<T: Real>(clouds: &[PointCloud<T>]) -> Result<PartialDenseBatch<T>> {
    if clouds.is_empty() {
        return Err(Error::param("cannot collate an empty list"));
    }
    let f = check_feature_dims(clouds)?;
    let has_labels = clouds[0].labels().is_some();
    if let Some(b) = clouds.iter().position(|c| c.labels().is_some() != has_labels) {
        return Err(Error::shape(format!("instance {b} disagrees with instance 0 on having labels")));
    }
    let total: usize = clouds.iter().map(PointCloud::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut batch = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(clouds.len() + 1);
    let mut labels = has_labels.then(|| Vec::with_capacity(total));
    offsets.push(0);
    for (b, c) in clouds.iter().enumerate() {
        positions.extend_from_slice(c.positions());
        batch.extend(std::iter::repeat_n(b, c.len()));
        offsets.push(positions.len());
        if let (Some(all), Some(l)) = (labels.as_mut(), c.labels()) {
            all.extend_from_slice(l);
        }
    }
    let features = match f {
        Some(dim) => {
            let views: Vec<_> = clouds.iter().map(|c| c.features().expect("checked").view()).collect();
            Some(if views.is_empty() {
                Array2::zeros((0, dim))
            } else {
                ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?
            })
        }
        None => None,
    };
    Ok(PartialDenseBatch {
        positions,
        features,
        labels,
        batch,
        offsets,
    })
}

/// Voxelized instances with integer coordinates, rows sorted by
/// `(batch, i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBatch<T: Real> {
    pub coords: Vec<[i64; 3]>,
    pub batch: Vec<usize>,
    /// Mean of the member features per voxel (`M × 0` for featureless input).
    pub features: Array2<T>,
    /// Majority label per voxel, when the inputs carry labels.
    pub labels: Option<Vec<i32>>,
}

impl<T: Real> SparseBatch<T> {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

struct VoxelRows<T> {
    keys: Vec<VoxelKey>,
    features: Vec<Vec<T>>,
    labels: Vec<i32>,
}

fn voxelize_instance<T: Real>(cloud: &PointCloud<T>, cell_size: T, f: usize) -> VoxelRows<T> {
    let (keys, mapping) = voxel_groups(cloud.positions(), cell_size);
    let mut sums = vec![vec![T::zero(); f]; keys.len()];
    let mut counts = vec![0usize; keys.len()];
    let mut members: Vec<Vec<i32>> = vec![Vec::new(); keys.len()];
    for (i, &slot) in mapping.iter().enumerate() {
        counts[slot] += 1;
        if let Some(feat) = cloud.features() {
            for (acc, &v) in sums[slot].iter_mut().zip(feat.row(i)) {
                *acc += v;
            }
        }
        if let Some(l) = cloud.labels() {
            members[slot].push(l[i]);
        }
    }
    // sort voxels by key so rows come out in (i, j, k) order
    let sorted: BTreeMap<VoxelKey, usize> = keys.iter().enumerate().map(|(s, k)| (*k, s)).collect();
    let mut rows = VoxelRows {
        keys: Vec::with_capacity(keys.len()),
        features: Vec::with_capacity(keys.len()),
        labels: Vec::with_capacity(keys.len()),
    };
    for (key, slot) in sorted {
        let n = T::from_usize(counts[slot]).unwrap();
        rows.keys.push(key);
        rows.features.push(sums[slot].iter().map(|&v| v / n).collect());
        rows.labels.push(majority_label(members[slot].iter().copied()));
    }
    rows
}

/// Voxelizes each instance separately; voxels never merge across instances.
pub fn collate_sparse<T: Real>(clouds: &[PointCloud<T>], cell_size: T) -> Result<SparseBatch<T>> {
    if !(cell_size > T::zero()) || !cell_size.is_finite() {
        return Err(Error::param(format!("cell size must be positive, got {cell_size}")));
    }
    if clouds.is_empty() {
        return Err(Error::param("cannot collate an empty list"));
    }
    let f = check_feature_dims(clouds)?.unwrap_or(0);
    let has_labels = clouds.iter().all(|c| c.labels().is_some());
    let per_instance: Vec<VoxelRows<T>> = clouds
        .par_iter()
        .map(|c| voxelize_instance(c, cell_size, f))
        .collect();
    let m: usize = per_instance.iter().map(|r| r.keys.len()).sum();
    let mut coords = Vec::with_capacity(m);
    let mut batch = Vec::with_capacity(m);
    let mut feats = Vec::with_capacity(m * f);
    let mut labels = Vec::with_capacity(m);
    for (b, rows) in per_instance.into_iter().enumerate() {
        batch.extend(std::iter::repeat_n(b, rows.keys.len()));
        coords.extend(rows.keys.into_iter().map(|k| k.0));
        feats.extend(rows.features.into_iter().flatten());
        labels.extend(rows.labels);
    }
    Ok(SparseBatch {
        coords,
        batch,
        features: Array2::from_shape_vec((m, f), feats).expect("rows have equal width"),
        labels: has_labels.then_some(labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_cloud;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn labeled(rng: &mut ChaCha8Rng, n: usize, f: usize) -> PointCloud<f64> {
        let c = random_cloud(rng, n, 1.0);
        let feats = Array2::from_shape_fn((n, f), |(i, j)| (i * 10 + j) as f64);
        c.with_features(feats)
            .unwrap()
            .with_labels((0..n as i32).map(|i| i % 3).collect())
            .unwrap()
    }

    #[test]
    fn dense_single_exact_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = labeled(&mut rng, 6, 2);
        let batch = collate_dense(std::slice::from_ref(&c), 6, &mut rng).unwrap();
        assert_eq!(batch.data.shape(), &[1, 6, 5]);
        let mut got: Vec<i64> = batch.data.index_axis(Axis(0), 0).column(3).iter().map(|v| *v as i64).collect();
        got.sort_unstable();
        assert_eq!(got, vec![0, 10, 20, 30, 40, 50]);
    }

    #[test]
    fn dense_pads_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clouds = vec![labeled(&mut rng, 5, 1), labeled(&mut rng, 9, 1)];
        let batch = collate_dense(&clouds, 8, &mut rng).unwrap();
        assert_eq!(batch.data.shape(), &[2, 8, 4]);
        let ids: HashSet<i64> = batch.data.index_axis(Axis(0), 0).column(3).iter().map(|v| *v as i64).collect();
        assert!(ids.len() < 8, "instance 0 must repeat a point");
        let a = collate_dense(&clouds, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = collate_dense(&clouds, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(collate_dense::<f64, _>(&[], 8, &mut rng).is_err());
    }

    #[test]
    fn partial_dense_batch_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clouds = vec![labeled(&mut rng, 4, 1), labeled(&mut rng, 2, 1)];
        let batch = collate_partial_dense(&clouds).unwrap();
        assert_eq!(batch.batch, vec![0, 0, 0, 0, 1, 1]);
        let single = collate_partial_dense(&clouds[..1]).unwrap();
        assert!(single.batch.iter().all(|&b| b == 0));
    }

    #[test]
    fn partial_dense_round_trip_and_label_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clouds: Vec<_> = (0..7).map(|i| labeled(&mut rng, 3 + i * 5, 2)).collect();
        let batch = collate_partial_dense(&clouds).unwrap();
        for (b, c) in clouds.iter().enumerate() {
            assert_eq!(&batch.instance(b).unwrap(), c);
        }
        let mut got = batch.labels.clone().unwrap();
        let mut want: Vec<i32> = clouds.iter().flat_map(|c| c.labels().unwrap().to_vec()).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        assert!(batch.batch.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*batch.batch.last().unwrap(), clouds.len() - 1);
    }

    #[test]
    fn partial_dense_rejects_mismatched_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clouds = vec![labeled(&mut rng, 4, 1), labeled(&mut rng, 4, 2)];
        assert!(matches!(collate_partial_dense(&clouds), Err(Error::Shape(_))));
    }

    #[test]
    fn sparse_never_merges_instances() {
        let p = PointCloud::new(vec![[0.1, 0.1, 0.1]]).unwrap();
        let batch = collate_sparse(&[p.clone(), p], 0.5).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.batch, vec![0, 1]);
        assert_eq!(batch.coords, vec![[0, 0, 0], [0, 0, 0]]);
    }

    #[test]
    fn sparse_means_features_within_voxel() {
        let c = PointCloud::new(vec![[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]])
            .unwrap()
            .with_features(Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap())
            .unwrap()
            .with_labels(vec![4, 4])
            .unwrap();
        let batch = collate_sparse(&[c], 0.5).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.features[(0, 0)], 1.5);
        assert_eq!(batch.labels, Some(vec![4]));
        assert!(collate_sparse::<f64>(&[], 0.5).is_err());
        let p = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(collate_sparse(&[p], 0.0).is_err());
    }

    #[test]
    fn sparse_row_count_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clouds: Vec<_> = (0..5).map(|i| labeled(&mut rng, 200 + 100 * i, 2)).collect();
        let batch = collate_sparse(&clouds, 0.1).unwrap();
        let expected: usize = clouds
            .iter()
            .map(|c| {
                c.positions()
                    .iter()
                    .map(|p| ((p[0] / 0.1).floor() as i64, (p[1] / 0.1).floor() as i64, (p[2] / 0.1).floor() as i64))
                    .collect::<HashSet<_>>()
                    .len()
            })
            .sum();
        assert_eq!(batch.len(), expected);
        let rows: Vec<_> = batch.batch.iter().zip(&batch.coords).collect();
        assert!(rows.windows(2).all(|w| w[0] < w[1]), "rows sorted and distinct");
    }

    #[test]
    fn sparse_invariant_to_point_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let clouds: Vec<_> = (0..3).map(|_| labeled(&mut rng, 300, 1)).collect();
        let shuffled: Vec<_> = clouds
            .iter()
            .map(|c| {
                let mut idx: Vec<usize> = (0..c.len()).collect();
                idx.shuffle(&mut rng);
                c.select(&idx)
            })
            .collect();
        let a = collate_sparse(&clouds, 0.2).unwrap();
        let b = collate_sparse(&shuffled, 0.2).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.batch, b.batch);
        assert_eq!(a.labels, b.labels);
        assert!((&a.features - &b.features).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn conv_type_parsing() {
        assert_eq!("PARTIAL_DENSE".parse::<ConvType>().unwrap(), ConvType::PartialDense);
        assert_eq!("dense".parse::<ConvType>().unwrap(), ConvType::Dense);
        assert!("MESSAGE_PASSING".parse::<ConvType>().is_err());
    }
}
