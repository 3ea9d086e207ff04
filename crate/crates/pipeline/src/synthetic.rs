//! Seeded synthetic scenes and registration pairs for benchmarks and tests.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use tp3_core::{Cloud, Transform};

/// A labeled box-shaped room of `n` points, about 1000 points per square
/// meter of floor and 3 m high. Class 0 is the floor, class 1 the walls and
/// the remaining classes tile the interior in 1 m cubes, so class sizes are
/// deliberately unequal.
pub fn synthetic_room(n: usize, num_classes: usize, seed: u64) -> Cloud {
    assert!(num_classes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64 / 1000.0).sqrt().max(1.0);
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = [rng.random::<f64>() * side, rng.random::<f64>() * side, rng.random::<f64>() * 3.0];
        let wall = p[0].min(p[1]).min(side - p[0]).min(side - p[1]) < 0.2;
        let label = if p[2] < 0.3 {
            0
        } else if wall {
            1
        } else {
            let block = p[0] as usize + 3 * p[1] as usize + 5 * p[2] as usize;
            2 + block % num_classes.saturating_sub(2).max(1)
        };
        positions.push(p);
        labels.push(label.min(num_classes - 1) as i32);
    }
    Cloud::new(positions).unwrap().with_labels(labels).unwrap()
}

pub fn random_transform<R: Rng>(rng: &mut R, max_translation: f64) -> Transform {
    let axis = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let angle = rng.random::<f64>() * std::f64::consts::PI;
    let t = Vector3::from_fn(|_, _| (rng.random::<f64>() * 2.0 - 1.0) * max_translation);
    Transform::from_axis_angle(axis, angle, t).unwrap()
}

/// A source/target pair with features that put a known share of the nearest
/// neighbour matches on wrong points.
#[derive(Debug, Clone)]
pub struct RegistrationPair {
    pub source: Cloud,
    pub target: Cloud,
    pub source_features: Array2<f64>,
    pub target_features: Array2<f64>,
    pub truth: Transform,
}

/// `n` points uniform in a 4 m cube, target `= truth · source + N(0, sigma²)`.
/// Each point gets a random 8-dim descriptor; the target copies it, except
/// that descriptors of a random `outlier_fraction` of points are shuffled
/// among themselves, so their matches land on unrelated points.
pub fn registration_pair(n: usize, outlier_fraction: f64, sigma: f64, seed: u64) -> RegistrationPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_transform(&mut rng, 2.0);
    let source_pts: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0])
        .collect();
    let noise = Normal::new(0.0, sigma).unwrap();
    let target_pts: Vec<[f64; 3]> = source_pts
        .iter()
        .map(|p| {
            let q = truth.apply_point(p);
            [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng), q[2] + noise.sample(&mut rng)]
        })
        .collect();
    let source_features = Array2::from_shape_fn((n, 8), |_| rng.random::<f64>());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let outliers = &order[..(n as f64 * outlier_fraction).round() as usize];
    // a cyclic shift is a derangement, so every outlier really is wrong
    let mut donors = outliers.to_vec();
    if !donors.is_empty() {
        donors.rotate_left(1);
    }
    let mut target_features = source_features.clone();
    for (&o, &d) in outliers.iter().zip(&donors) {
        target_features.row_mut(o).assign(&source_features.row(d));
    }
    RegistrationPair {
        source: Cloud::new(source_pts).unwrap(),
        target: Cloud::new(target_pts).unwrap(),
        source_features,
        target_features,
        truth,
    }
}
