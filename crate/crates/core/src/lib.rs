//! Point-cloud data engine: spatial kernels, batch collation, augmentation
//! pipelines, the sphere sampling protocol with voting, task metrics and
//! RANSAC rigid registration.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what file I/O and the CLI use.

pub mod collate;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod protocol;
pub mod registration;
pub mod scalar;
pub mod seed;
pub mod spatial;
pub mod transforms;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use geometry::{AxisAlignedBox, PointCloud, RigidTransform, IGNORE_LABEL};
pub use scalar::Real;

pub type Cloud = PointCloud<f64>;
pub type Cloud32 = PointCloud<f32>;
pub type Transform = RigidTransform<f64>;
pub type Box3 = AxisAlignedBox<f64>;
