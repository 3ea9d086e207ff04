use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{PointCloud, RigidTransform};

pub fn random_points<R: Rng>(rng: &mut R, n: usize, extent: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random::<f64>() * extent,
                rng.random::<f64>() * extent,
                rng.random::<f64>() * extent,
            ]
        })
        .collect()
}

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, extent: f64) -> PointCloud<f64> {
    PointCloud::new(random_points(rng, n, extent)).unwrap()
}

pub fn random_transform<R: Rng>(rng: &mut R, extent: f64) -> RigidTransform<f64> {
    let axis = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let angle = rng.random::<f64>() * std::f64::consts::PI;
    let t = Vector3::new(
        (rng.random::<f64>() - 0.5) * 2.0 * extent,
        (rng.random::<f64>() - 0.5) * 2.0 * extent,
        (rng.random::<f64>() - 0.5) * 2.0 * extent,
    );
    RigidTransform::from_axis_angle(axis, angle, t).unwrap()
}
