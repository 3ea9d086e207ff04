use ndarray::Array2;
use rayon::prelude::*;

use super::grid::HashGrid;
use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Real;

/// Fixed-width neighbour lists, padded with a shadow index.
///
/// Row `q` holds `counts[q]` real support indices followed by `sentinel`,
/// which equals the support size so that consumers can append a zero
/// "shadow point" row and gather without bounds checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    indices: Vec<usize>,
    width: usize,
    counts: Vec<usize>,
    sentinel: usize,
}

impl NeighborTable {
    fn from_rows(rows: Vec<Vec<usize>>, width: usize, sentinel: usize) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * width);
        let mut counts = Vec::with_capacity(rows.len());
        for row in rows {
            counts.push(row.len());
            let pad = width - row.len();
            indices.extend(row);
            indices.extend(std::iter::repeat_n(sentinel, pad));
        }
        Self {
            indices,
            width,
            counts,
            sentinel,
        }
    }

    pub fn num_queries(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sentinel(&self) -> usize {
        self.sentinel
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Row-major `Q × width` matrix, sentinel-padded.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Full padded row.
    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.width..(q + 1) * self.width]
    }

    /// Only the real neighbours of query `q`.
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.row(q)[..self.counts[q]]
    }
}

/// Up to `max_k` support points within `r` of each query.
///
/// When more than `max_k` points qualify, the `max_k` nearest are kept
/// (distance ties by index). Kept neighbours are listed nearest first.
pub fn radius_search<T: Real>(
    support: &[Point<T>],
    query: &[Point<T>],
    r: T,
    max_k: usize,
) -> Result<NeighborTable> {
    if !(r > T::zero()) || !r.is_finite() {
        return Err(Error::param(format!("radius must be positive, got {r}")));
    }
    if max_k == 0 {
        return Err(Error::param("max_k must be at least 1"));
    }
    let n = support.len();
    if n == 0 {
        return Ok(NeighborTable::from_rows(vec![Vec::new(); query.len()], max_k, 0));
    }
    let grid = HashGrid::new(support, r)?;
    let rows: Vec<Vec<usize>> = query
        .par_iter()
        .map(|q| {
            let mut hits: Vec<(T, usize)> = Vec::new();
            grid.for_each_within(q, r, |i, d2| hits.push((d2, i)));
            if hits.len() > max_k {
                hits.select_nth_unstable_by(max_k - 1, cmp_hit);
                hits.truncate(max_k);
            }
            hits.sort_unstable_by(cmp_hit);
            hits.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    Ok(NeighborTable::from_rows(rows, max_k, n))
}

fn cmp_hit<T: Real>(a: &(T, usize), b: &(T, usize)) -> std::cmp::Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Exactly `min(k, N)` nearest support points per query, ascending distance.
pub fn knn_search<T: Real>(support: &[Point<T>], query: &[Point<T>], k: usize) -> Result<NeighborTable> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if support.is_empty() {
        return Err(Error::param("knn search needs a nonempty support"));
    }
    let tree = KdTree::new(support.as_flattened(), 3);
    let width = k.min(support.len());
    let rows: Vec<Vec<usize>> = query
        .par_iter()
        .map(|q| tree.nearest(q, width).into_iter().map(|(i, _)| i).collect())
        .collect();
    Ok(NeighborTable::from_rows(rows, width, support.len()))
}

/// Inverse-distance interpolation of `features` (one row per source point)
/// onto `targets` from the `k` nearest sources, `w = 1 / (d + 1e-8)`.
/// A target coinciding with its nearest source copies that source's row.
pub fn knn_interpolate<T: Real>(
    source: &[Point<T>],
    features: &Array2<T>,
    targets: &[Point<T>],
    k: usize,
) -> Result<Array2<T>> {
    if source.is_empty() {
        return Err(Error::param("interpolation needs a nonempty source"));
    }
    if features.nrows() != source.len() {
        return Err(Error::shape(format!(
            "{} feature rows for {} source points",
            features.nrows(),
            source.len()
        )));
    }
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let eps = T::lit(1e-8);
    let tree = KdTree::new(source.as_flattened(), 3);
    let f = features.ncols();
    let rows: Vec<Vec<T>> = targets
        .par_iter()
        .map(|t| {
            let nn = tree.nearest(t, k);
            if nn[0].1 == T::zero() {
                return features.row(nn[0].0).to_vec();
            }
            let mut acc = vec![T::zero(); f];
            let mut wsum = T::zero();
            for (i, d2) in nn {
                let w = T::one() / (d2.sqrt() + eps);
                wsum += w;
                for (a, &v) in acc.iter_mut().zip(features.row(i)) {
                    *a += w * v;
                }
            }
            acc.into_iter().map(|a| a / wsum).collect()
        })
        .collect();
    Ok(Array2::from_shape_vec((targets.len(), f), rows.concat()).expect("row lengths agree"))
}
