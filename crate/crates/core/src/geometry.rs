//! Point clouds, rigid transforms and axis-aligned boxes.

use nalgebra::{Matrix3, Matrix4, Vector3};
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Label id excluded from every metric and from class statistics.
pub const IGNORE_LABEL: i32 = -1;

pub type Point<T> = [T; 3];

#[inline]
pub fn dist2<T: Real>(a: &Point<T>, b: &Point<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm<T: Real>(a: &Point<T>) -> T {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Positions plus optional per-point features, labels and class probabilities.
///
/// All per-point arrays share the leading length `N`. Positions are finite.
/// Probability rows, when present, are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    positions: Vec<Point<T>>,
    features: Option<Array2<T>>,
    labels: Option<Vec<i32>>,
    prob: Option<Array2<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(positions: Vec<Point<T>>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::param(format!("position {i} is not finite")));
        }
        Ok(Self {
            positions,
            features: None,
            labels: None,
            prob: None,
        })
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            features: None,
            labels: None,
            prob: None,
        }
    }

    pub fn with_features(mut self, features: Array2<T>) -> Result<Self> {
        if features.nrows() != self.len() {
            return Err(Error::shape(format!(
                "features have {} rows for {} points",
                features.nrows(),
                self.len()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_prob(mut self, prob: Array2<T>) -> Result<Self> {
        if prob.nrows() != self.len() {
            return Err(Error::shape(format!(
                "probabilities have {} rows for {} points",
                prob.nrows(),
                self.len()
            )));
        }
        let tol = T::lit(1e-6).max(T::epsilon() * T::lit(64.0) * T::from_usize(prob.ncols()).unwrap());
        for (i, row) in prob.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&p| !(p >= T::zero())) {
                return Err(Error::param(format!("probability row {i} has a negative entry")));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::param(format!("probability row {i} sums to {s}")));
            }
        }
        self.prob = Some(prob);
        Ok(self)
    }

    /// Replaces positions, keeping every per-point attribute.
    pub fn with_positions(mut self, positions: Vec<Point<T>>) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(Error::shape(format!(
                "{} positions replacing {}",
                positions.len(),
                self.len()
            )));
        }
        let checked = PointCloud::new(positions)?;
        self.positions = checked.positions;
        Ok(self)
    }

    pub fn without_prob(mut self) -> Self {
        self.prob = None;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Point<T>] {
        &self.positions
    }

    pub fn features(&self) -> Option<&Array2<T>> {
        self.features.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.ncols())
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn prob(&self) -> Option<&Array2<T>> {
        self.prob.as_ref()
    }

    /// Gathers the given rows of every per-point array. Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> PointCloud<T> {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.as_ref().map(|f| f.select(Axis(0), indices)),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            prob: self.prob.as_ref().map(|p| p.select(Axis(0), indices)),
        }
    }

    /// Componentwise `(min, max)` of the positions, `None` when empty.
    pub fn bounds(&self) -> Option<(Point<T>, Point<T>)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(mut lo, mut hi), p| {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
            (lo, hi)
        }))
    }

    pub fn centroid(&self) -> Option<Point<T>> {
        if self.is_empty() {
            return None;
        }
        let n = T::from_usize(self.len()).unwrap();
        let mut c = [T::zero(); 3];
        for p in &self.positions {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        Some([c[0] / n, c[1] / n, c[2] / n])
    }
}

/// A proper rigid motion `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

fn orthonormal_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

pub(crate) fn det3<T: Real>(m: &Matrix3<T>) -> T {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

impl<T: Real> RigidTransform<T> {
    /// Checks `RᵀR = I` and `det R = +1` within 1e-9 (or a few ulps for `f32`).
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let tol = orthonormal_tolerance::<T>();
        let gram = rotation.transpose() * rotation;
        let ortho = (gram - Matrix3::identity()).iter().all(|e| e.abs() <= tol);
        if !ortho || (det3(&rotation) - T::one()).abs() > tol {
            return Err(Error::param("rotation is not a proper orthonormal matrix"));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::param("translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips validation; used where the construction itself guarantees a rotation.
    pub(crate) fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self::from_parts(Matrix3::identity(), t)
    }

    /// Rodrigues rotation of `angle` radians about `axis` (normalized here).
    pub fn from_axis_angle(axis: Vector3<T>, angle: T, translation: Vector3<T>) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > T::zero()) {
            return Err(Error::param("rotation axis has zero length"));
        }
        let k = axis / n;
        let (s, c) = angle.sin_cos();
        let kx = Matrix3::new(
            T::zero(),
            -k[2],
            k[1],
            k[2],
            T::zero(),
            -k[0],
            -k[1],
            k[0],
            T::zero(),
        );
        let r = Matrix3::identity() + kx * s + kx * kx * (T::one() - c);
        Ok(Self::from_parts(r, translation))
    }

    pub fn rotation_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one());
        Self::from_parts(r, Vector3::zeros())
    }

    /// Reads the upper 3×4 block of a homogeneous matrix.
    pub fn from_homogeneous(m: &Matrix4<T>) -> Result<Self> {
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(r, t)
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    #[inline]
    pub fn apply_point(&self, p: &Point<T>) -> Point<T> {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + t[0],
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + t[1],
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + t[2],
        ]
    }

    /// Moves every position; features, labels and probabilities are carried over.
    pub fn apply(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        let mut out = cloud.clone();
        for p in &mut out.positions {
            *p = self.apply_point(p);
        }
        out
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform<T>) -> RigidTransform<T> {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform<T> {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -(rt * self.translation))
    }
}

/// Axis-aligned 3D box with a class id and an optional confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAlignedBox<T: Real> {
    pub min_corner: Point<T>,
    pub max_corner: Point<T>,
    pub class_id: i32,
    pub score: Option<T>,
}

impl<T: Real> AxisAlignedBox<T> {
    pub fn new(min_corner: Point<T>, max_corner: Point<T>, class_id: i32) -> Result<Self> {
        if (0..3).any(|d| !(min_corner[d] <= max_corner[d])) {
            return Err(Error::param("box min corner exceeds max corner"));
        }
        Ok(Self {
            min_corner,
            max_corner,
            class_id,
            score: None,
        })
    }

    pub fn with_score(mut self, score: T) -> Result<Self> {
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::param(format!("box score {score} outside [0, 1]")));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn volume(&self) -> T {
        (0..3)
            .map(|d| self.max_corner[d] - self.min_corner[d])
            .fold(T::one(), |acc, e| acc * e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_cloud, random_transform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &PointCloud<f64>, b: &PointCloud<f64>) -> f64 {
        a.positions()
            .iter()
            .zip(b.positions())
            .flat_map(|(p, q)| (0..3).map(move |d| (p[d] - q[d]).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = random_cloud(&mut rng, 50, 1.0).with_labels(vec![3; 50]).unwrap();
        assert_eq!(RigidTransform::identity().apply(&cloud), cloud);
    }

    #[test]
    fn pure_translation() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(t.apply(&cloud).positions()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = random_transform(&mut rng, 5.0);
            let cloud = random_cloud(&mut rng, 100, 3.0);
            let back = t.inverse().apply(&t.apply(&cloud));
            assert!(max_diff(&back, &cloud) < 1e-9);
        }
    }

    #[test]
    fn compose_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng, 5.0);
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        let id = t.inverse().compose(&t);
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation().abs().max() < 1e-9);
        let back = t.inverse().inverse();
        assert!((back.rotation() - t.rotation()).abs().max() < 1e-9);
        assert!((back.translation() - t.translation()).abs().max() < 1e-9);
        assert_eq!(RigidTransform::<f64>::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = random_transform(&mut rng, 5.0);
            let b = random_transform(&mut rng, 5.0);
            let cloud = random_cloud(&mut rng, 100, 2.0);
            let seq = a.apply(&b.apply(&cloud));
            assert!(max_diff(&a.compose(&b).apply(&cloud), &seq) < 1e-9);
            let ident = a.compose(&a.inverse()).apply(&cloud);
            assert!(max_diff(&ident, &cloud) < 1e-9);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_transform(&mut rng, 5.0);
            let b = random_transform(&mut rng, 5.0);
            let c = random_transform(&mut rng, 5.0);
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!((l.rotation() - r.rotation()).abs().max() < 1e-9);
            assert!((l.translation() - r.translation()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn transforms_are_isometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_transform(&mut rng, 10.0);
        let cloud = random_cloud(&mut rng, 60, 4.0);
        let moved = t.apply(&cloud);
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                let a = dist2(&cloud.positions()[i], &cloud.positions()[j]).sqrt();
                let b = dist2(&moved.positions()[i], &moved.positions()[j]).sqrt();
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn random_transforms_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t = random_transform(&mut rng, 1.0);
            assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
        }
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn homogeneous_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_transform(&mut rng, 3.0);
        assert_eq!(RigidTransform::from_homogeneous(&t.to_homogeneous()).unwrap(), t);
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
        let c = PointCloud::new(vec![[0.0; 3]; 2]).unwrap();
        assert!(c.clone().with_labels(vec![1]).is_err());
        let bad = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.7, 0.7]).unwrap();
        assert!(c.clone().with_prob(bad).is_err());
        let neg = Array2::from_shape_vec((2, 2), vec![1.5, -0.5, 0.5, 0.5]).unwrap();
        assert!(c.clone().with_prob(neg).is_err());
        let ok = Array2::from_shape_vec((2, 2), vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        assert!(c.with_prob(ok).is_ok());
    }

    #[test]
    fn degenerate_box_allowed() {
        let b = AxisAlignedBox::new([0.0; 3], [1.0, 0.0, 1.0], 0).unwrap();
        assert_eq!(b.volume(), 0.0);
        assert!(AxisAlignedBox::new([1.0, 0.0, 0.0], [0.0; 3], 0).is_err());
        assert!(b.with_score(1.5).is_err());
    }
}
