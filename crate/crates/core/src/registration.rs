//! Rigid registration from putative correspondences: feature matching,
//! weighted Kabsch alignment and a RANSAC wrapper around it.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{det3, Point, RigidTransform};
use crate::scalar::Real;
use crate::seed::derive_seed;
use crate::spatial::KdTree;

pub const DEFAULT_RANSAC_ITERATIONS: usize = 10_000;

/// Index pairs `(i in A, j in B)` with optional nonnegative weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs, weights: None }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.pairs.len() {
            return Err(Error::shape(format!("{} weights for {} pairs", weights.len(), self.pairs.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::param("correspondence weights must be finite and nonnegative"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks every index against the cloud sizes.
    pub fn validate(&self, len_a: usize, len_b: usize) -> Result<()> {
        match self.pairs.iter().position(|&(i, j)| i >= len_a || j >= len_b) {
            Some(k) => Err(Error::param(format!(
                "correspondence {k} {:?} out of range for clouds of {len_a} and {len_b} points",
                self.pairs[k]
            ))),
            None => Ok(()),
        }
    }
}

/// Pairs every row of `feat_a` with its nearest row of `feat_b` (smallest
/// index on ties). With `mutual`, only reciprocal nearest neighbours survive.
pub fn match_features<T: Real>(feat_a: &Array2<T>, feat_b: &Array2<T>, mutual: bool) -> Result<CorrespondenceSet> {
    if feat_a.nrows() == 0 || feat_b.nrows() == 0 {
        return Err(Error::param("feature matching needs two nonempty feature sets"));
    }
    if feat_a.ncols() != feat_b.ncols() || feat_a.ncols() == 0 {
        return Err(Error::shape(format!(
            "feature dimensions {} and {}",
            feat_a.ncols(),
            feat_b.ncols()
        )));
    }
    let dim = feat_a.ncols();
    let a = feat_a.as_standard_layout();
    let b = feat_b.as_standard_layout();
    let (a, b) = (a.as_slice().expect("standard layout"), b.as_slice().expect("standard layout"));
    let nearest_in = |data: &[T], queries: &[T]| -> Vec<usize> {
        let tree = KdTree::new(data, dim);
        queries.par_chunks(dim).map(|q| tree.nearest(q, 1)[0].0).collect()
    };
    let a_to_b = nearest_in(b, a);
    let pairs: Vec<(usize, usize)> = if mutual {
        let b_to_a = nearest_in(a, b);
        a_to_b
            .iter()
            .enumerate()
            .filter(|&(i, &j)| b_to_a[j] == i)
            .map(|(i, &j)| (i, j))
            .collect()
    } else {
        a_to_b.into_iter().enumerate().collect()
    };
    Ok(CorrespondenceSet::new(pairs))
}

/// Weighted least-squares rigid alignment: the transform minimising
/// `Σ wₖ‖R·aₖ + t − bₖ‖²`, with `det R = +1` enforced by flipping the
/// smallest singular direction when needed.
pub fn fit_rigid<T: Real>(a: &[Point<T>], b: &[Point<T>], weights: Option<&[T]>) -> Result<RigidTransform<T>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} source points for {} targets", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::param(format!("rigid fit needs at least 3 pairs, got {}", a.len())));
    }
    if let Some(w) = weights {
        if w.len() != a.len() {
            return Err(Error::shape(format!("{} weights for {} pairs", w.len(), a.len())));
        }
        if w.iter().any(|x| !(*x >= T::zero() && x.is_finite())) {
            return Err(Error::param("weights must be finite and nonnegative"));
        }
    }
    let weight = |k: usize| weights.map_or(T::one(), |w| w[k]);
    let total: T = (0..a.len()).map(weight).sum();
    if !(total > T::zero()) {
        return Err(Error::Estimation("all weights are zero".into()));
    }
    let mut ca = Vector3::zeros();
    let mut cb = Vector3::zeros();
    for k in 0..a.len() {
        let w = weight(k);
        ca += Vector3::from(a[k]) * w;
        cb += Vector3::from(b[k]) * w;
    }
    ca /= total;
    cb /= total;
    let mut h = Matrix3::zeros();
    for k in 0..a.len() {
        let da = Vector3::from(a[k]) - ca;
        let db = Vector3::from(b[k]) - cb;
        h += da * db.transpose() * weight(k);
    }
    let (u, s, v_t) = T::svd3(&h);
    if !(s[0] > T::zero()) || s[1] <= s[0] * T::epsilon().sqrt() {
        return Err(Error::Estimation(
            "correspondences are degenerate (covariance rank below 2)".into(),
        ));
    }
    let v = v_t.transpose();
    let u_t = u.transpose();
    let mut d = Matrix3::identity();
    if det3(&(v * u_t)) < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let r = v * d * u_t;
    let t = cb - r * ca;
    Ok(RigidTransform::from_parts(r, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_dist: f64,
    pub seed: u64,
}

impl RansacParams {
    pub fn new(iterations: usize, inlier_dist: f64, seed: u64) -> Self {
        Self {
            iterations,
            inlier_dist,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult<T: Real> {
    pub transform: RigidTransform<T>,
    /// Positions in the correspondence list, ascending.
    pub inliers: Vec<usize>,
    /// Iteration whose minimal model won.
    pub best_iteration: usize,
}

/// RANSAC over 3-point minimal samples.
///
/// Iteration `k` draws its sample from a stream seeded by `(seed, k)`, so the
/// outcome is the same however the iterations are spread over threads. The
/// model with most inliers wins, the earlier iteration on ties, and the answer
/// is refit on its inlier set.
pub fn ransac_rigid<T: Real>(
    a: &[Point<T>],
    b: &[Point<T>],
    corrs: &CorrespondenceSet,
    params: &RansacParams,
) -> Result<RansacResult<T>> {
    if corrs.len() < 3 {
        return Err(Error::param(format!("RANSAC needs at least 3 correspondences, got {}", corrs.len())));
    }
    if params.iterations == 0 {
        return Err(Error::param("RANSAC needs at least one iteration"));
    }
    if !(params.inlier_dist > 0.0 && params.inlier_dist.is_finite()) {
        return Err(Error::param(format!("inlier distance {} must be positive", params.inlier_dist)));
    }
    corrs.validate(a.len(), b.len())?;
    let src: Vec<Point<T>> = corrs.pairs.iter().map(|&(i, _)| a[i]).collect();
    let dst: Vec<Point<T>> = corrs.pairs.iter().map(|&(_, j)| b[j]).collect();
    let thr2 = T::lit(params.inlier_dist * params.inlier_dist);

    let count_inliers = |m: &RigidTransform<T>| {
        src.iter()
            .zip(&dst)
            .filter(|(p, q)| crate::geometry::dist2(&m.apply_point(p), q) <= thr2)
            .count()
    };
    let minimal_model = |it: usize| -> Option<RigidTransform<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[params.seed, it as u64]));
        let pick = sample(&mut rng, src.len(), 3);
        let sa: Vec<Point<T>> = pick.iter().map(|k| src[k]).collect();
        let sb: Vec<Point<T>> = pick.iter().map(|k| dst[k]).collect();
        fit_rigid(&sa, &sb, None).ok()
    };

    let best = (0..params.iterations)
        .into_par_iter()
        .filter_map(|it| minimal_model(it).map(|m| (count_inliers(&m), it)))
        .reduce_with(|x, y| if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x });
    let (count, it) = match best {
        Some(b) if b.0 >= 3 => b,
        Some((count, _)) => {
            return Err(Error::Estimation(format!(
                "best of {} RANSAC models has {count} inliers (need 3)",
                params.iterations
            )))
        }
        None => {
            return Err(Error::Estimation(format!(
                "all {} RANSAC samples were degenerate",
                params.iterations
            )))
        }
    };
    let model = minimal_model(it).expect("winning sample refits");
    let inliers: Vec<usize> = (0..src.len())
        .filter(|&k| crate::geometry::dist2(&model.apply_point(&src[k]), &dst[k]) <= thr2)
        .collect();
    debug_assert_eq!(inliers.len(), count);
    let ia: Vec<Point<T>> = inliers.iter().map(|&k| src[k]).collect();
    let ib: Vec<Point<T>> = inliers.iter().map(|&k| dst[k]).collect();
    let w: Option<Vec<T>> = corrs
        .weights
        .as_ref()
        .map(|w| inliers.iter().map(|&k| T::lit(w[k])).collect());
    let transform = match fit_rigid(&ia, &ib, w.as_deref()) {
        Ok(t) => t,
        // zero-weight inlier sets fall back to the minimal model
        Err(Error::Estimation(_)) if w.is_some() => model,
        Err(e) => return Err(e),
    };
    Ok(RansacResult {
        transform,
        inliers,
        best_iteration: it,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::registration_error;
    use crate::testutil::{random_points, random_transform};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn close(x: &RigidTransform<f64>, y: &RigidTransform<f64>, tol: f64) -> bool {
        (x.rotation() - y.rotation()).abs().max() < tol && (x.translation() - y.translation()).abs().max() < tol
    }

    #[test]
    fn identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_points(&mut rng, 20, 2.0);
        assert!(close(&fit_rigid(&a, &a, None).unwrap(), &RigidTransform::identity(), 1e-9));
        let b: Vec<_> = a.iter().map(|p| [p[0], p[1], p[2] + 1.0]).collect();
        let t = fit_rigid(&a, &b, None).unwrap();
        assert!(close(&t, &RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0)), 1e-9));
    }

    #[test]
    fn recovers_synthetic_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let truth = random_transform(&mut rng, 5.0);
            let a = random_points(&mut rng, 50, 3.0);
            let b: Vec<_> = a.iter().map(|p| truth.apply_point(p)).collect();
            let est = fit_rigid(&a, &b, None).unwrap();
            assert!(close(&est, &truth, 1e-9));
            let r = est.rotation();
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-9);
            assert!((det3(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reflection_is_corrected() {
        // mirrored target: best proper rotation still has det +1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_points(&mut rng, 30, 1.0);
        let b: Vec<_> = a.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let r = *fit_rigid(&a, &b, None).unwrap().rotation();
        assert!((det3(&r) - 1.0).abs() < 1e-9);
        assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn weighted_fit_minimises_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let truth = random_transform(&mut rng, 1.0);
        let a = random_points(&mut rng, 40, 2.0);
        let b: Vec<_> = a
            .iter()
            .map(|p| {
                let q = truth.apply_point(p);
                [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng), q[2] + noise.sample(&mut rng)]
            })
            .collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let cost = |t: &RigidTransform<f64>| -> f64 {
            a.iter()
                .zip(&b)
                .zip(&w)
                .map(|((p, q), w)| w * crate::geometry::dist2(&t.apply_point(p), q))
                .sum()
        };
        let est = fit_rigid(&a, &b, Some(&w)).unwrap();
        let best = cost(&est);
        for _ in 0..200 {
            let nudge = RigidTransform::from_axis_angle(
                Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                1e-3,
                Vector3::new(1e-3 * (rng.random::<f64>() - 0.5), 0.0, 0.0),
            )
            .unwrap();
            assert!(cost(&nudge.compose(&est)) >= best - 1e-12);
        }
        // zero weight removes a pair entirely
        let mut w0 = w.clone();
        w0[0] = 0.0;
        let dropped = fit_rigid(&a[1..], &b[1..], Some(&w[1..])).unwrap();
        assert!(close(&fit_rigid(&a, &b, Some(&w0)).unwrap(), &dropped, 1e-12));
    }

    #[test]
    fn equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let truth = random_transform(&mut rng, 2.0);
            let a = random_points(&mut rng, 25, 2.0);
            let noise = Normal::new(0.0, 0.02).unwrap();
            let b: Vec<_> = a
                .iter()
                .map(|p| {
                    let q = truth.apply_point(p);
                    [q[0] + noise.sample(&mut rng), q[1], q[2] - noise.sample(&mut rng)]
                })
                .collect();
            let q = random_transform(&mut rng, 0.0);
            let qa: Vec<_> = a.iter().map(|p| q.apply_point(p)).collect();
            let qb: Vec<_> = b.iter().map(|p| q.apply_point(p)).collect();
            let t = fit_rigid(&a, &b, None).unwrap();
            let tq = fit_rigid(&qa, &qb, None).unwrap();
            let conj = q.compose(&t).compose(&q.inverse());
            assert!(close(&tq, &conj, 1e-8));
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(fit_rigid(&line, &line, None), Err(Error::Estimation(_))));
        let same = vec![[1.0; 3]; 4];
        assert!(matches!(fit_rigid(&same, &same, None), Err(Error::Estimation(_))));
        assert!(matches!(fit_rigid(&line[..2], &line[..2], None), Err(Error::Parameter(_))));
    }

    #[test]
    fn f32_fit() {
        let a: Vec<[f32; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let t = RigidTransform::<f32>::rotation_z(0.7);
        let b: Vec<_> = a.iter().map(|p| t.apply_point(p)).collect();
        let est = fit_rigid(&a, &b, None).unwrap();
        assert!((est.rotation() - t.rotation()).abs().max() < 1e-5);
    }

    #[test]
    fn matching_analytic_and_identity() {
        let fa = Array2::from_shape_vec((2, 1), vec![0.0, 10.0]).unwrap();
        let fb = Array2::from_shape_vec((2, 1), vec![1.0, 9.0]).unwrap();
        assert_eq!(match_features(&fa, &fb, true).unwrap().pairs, vec![(0, 0), (1, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = Array2::from_shape_fn((100, 8), |_| rng.random::<f64>());
        let m = match_features(&f, &f, true).unwrap();
        assert_eq!(m.pairs, (0..100).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn matching_ties_and_mutual_filter() {
        // both rows of A are nearest to b0; b1 is a duplicate of b0
        let fa = Array2::from_shape_vec((2, 1), vec![0.0, 0.5]).unwrap();
        let fb = Array2::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap();
        assert_eq!(match_features(&fa, &fb, false).unwrap().pairs, vec![(0, 0), (1, 0)]);
        assert_eq!(match_features(&fa, &fb, true).unwrap().pairs, vec![(1, 0)]);
    }

    #[test]
    fn matching_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let d = [1, 3, 16, 32][trial % 4];
            let (n, m) = (rng.random_range(1..300), rng.random_range(1..300));
            // coarse values force ties
            let fa = Array2::from_shape_fn((n, d), |_| rng.random_range(0..4) as f64);
            let fb = Array2::from_shape_fn((m, d), |_| rng.random_range(0..4) as f64);
            let brute = |x: &Array2<f64>, y: &Array2<f64>, i: usize| -> usize {
                let mut best = (f64::INFINITY, 0);
                for j in 0..y.nrows() {
                    let d2: f64 = x.row(i).iter().zip(y.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
                    if d2 < best.0 {
                        best = (d2, j);
                    }
                }
                best.1
            };
            let plain: Vec<(usize, usize)> = (0..n).map(|i| (i, brute(&fa, &fb, i))).collect();
            assert_eq!(match_features(&fa, &fb, false).unwrap().pairs, plain);
            let mutual: Vec<(usize, usize)> =
                plain.iter().copied().filter(|&(i, j)| brute(&fb, &fa, j) == i).collect();
            assert_eq!(match_features(&fa, &fb, true).unwrap().pairs, mutual);
        }
    }

    #[test]
    fn matching_errors() {
        let e = Array2::<f64>::zeros((0, 3));
        let f = Array2::<f64>::zeros((2, 3));
        assert!(match_features(&e, &f, false).is_err());
        assert!(match_features(&f, &Array2::<f64>::zeros((2, 4)), false).is_err());
    }

    fn synthetic_pair(rng: &mut ChaCha8Rng, n: usize, outlier_frac: f64, sigma: f64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, RigidTransform<f64>, CorrespondenceSet) {
        let truth = random_transform(rng, 2.0);
        let a = random_points(rng, n, 4.0);
        let noise = Normal::new(0.0, sigma).unwrap();
        let b: Vec<_> = a
            .iter()
            .map(|p| {
                let q = truth.apply_point(p);
                [q[0] + noise.sample(rng), q[1] + noise.sample(rng), q[2] + noise.sample(rng)]
            })
            .collect();
        let n_out = (n as f64 * outlier_frac).round() as usize;
        let pairs = (0..n)
            .map(|i| if i < n_out { (i, rng.random_range(0..n)) } else { (i, i) })
            .collect();
        (a, b, truth, CorrespondenceSet::new(pairs))
    }

    #[test]
    fn ransac_outlier_free_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b, truth, corrs) = synthetic_pair(&mut rng, 200, 0.0, 0.0);
        let res = ransac_rigid(&a, &b, &corrs, &RansacParams::new(50, 0.01, 3)).unwrap();
        assert!(close(&res.transform, &truth, 1e-9));
        assert_eq!(res.inliers, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn ransac_three_correspondences_equal_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b, _, _) = synthetic_pair(&mut rng, 3, 0.0, 0.001);
        let corrs = CorrespondenceSet::new(vec![(0, 0), (1, 1), (2, 2)]);
        let res = ransac_rigid(&a, &b, &corrs, &RansacParams::new(10, 1.0, 0)).unwrap();
        assert_eq!(res.transform, fit_rigid(&a, &b, None).unwrap());
        assert_eq!(res.inliers, vec![0, 1, 2]);
    }

    #[test]
    fn ransac_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..5 {
            let (a, b, truth, corrs) = synthetic_pair(&mut rng, 1000, 0.3, 0.01);
            let res = ransac_rigid(&a, &b, &corrs, &RansacParams::new(2000, 0.05, seed)).unwrap();
            let e = registration_error(&res.transform, &truth);
            assert!(e.rotation_deg < 2.0 && e.translation < 0.06, "{e:?}");
        }
    }

    #[test]
    fn ransac_deterministic_across_thread_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b, _, corrs) = synthetic_pair(&mut rng, 300, 0.5, 0.01);
        let params = RansacParams::new(500, 0.05, 77);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ransac_rigid(&a, &b, &corrs, &params).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(7));
    }

    #[test]
    fn ransac_failures_are_distinct() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        // every pair maps to a different far-apart target, no consistent model
        let b = vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, -50.0, 0.0], [9.0, 200.0, 1.0]];
        let corrs = CorrespondenceSet::new(vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        let err = ransac_rigid(&a, &b, &corrs, &RansacParams::new(100, 0.01, 0)).unwrap_err();
        assert!(matches!(err, Error::Estimation(_)), "{err}");
        let bad = CorrespondenceSet::new(vec![(0, 0), (1, 9), (2, 2)]);
        assert!(matches!(ransac_rigid(&a, &b, &bad, &RansacParams::new(10, 0.1, 0)), Err(Error::Parameter(_))));
        assert!(matches!(ransac_rigid(&a, &b, &corrs, &RansacParams::new(0, 0.1, 0)), Err(Error::Parameter(_))));
        assert!(matches!(ransac_rigid(&a, &b, &corrs, &RansacParams::new(10, 0.0, 0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn positions_as_features_pipeline() {
        // identical clouds matched on raw coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = random_points(&mut rng, 300, 3.0);
        let feats = Array2::from_shape_fn((300, 3), |(i, d)| pts[i][d]);
        let corrs = match_features(&feats, &feats, true).unwrap();
        let res = ransac_rigid(&pts, &pts, &corrs, &RansacParams::new(20, 0.01, 0)).unwrap();
        assert!(close(&res.transform, &RigidTransform::identity(), 1e-9));
        assert_eq!(res.inliers.len(), 300);
    }
}
