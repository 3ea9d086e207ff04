use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::scalar::Real;

/// Rotation error in degrees and translation error in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationError {
    pub rotation_deg: f64,
    pub translation: f64,
}

/// `‖t_est − t*‖` and `arccos((tr(R_est R*ᵀ) − 1) / 2)` in degrees, with the
/// cosine clamped to [−1, 1].
pub fn registration_error<T: Real>(estimate: &RigidTransform<T>, truth: &RigidTransform<T>) -> RegistrationError {
    RegistrationError {
        rotation_deg: rotation_error_deg(estimate, truth),
        translation: (estimate.translation() - truth.translation())
            .iter()
            .map(|d| d.as_f64() * d.as_f64())
            .sum::<f64>()
            .sqrt(),
    }
}

pub fn rotation_error_deg<T: Real>(estimate: &RigidTransform<T>, truth: &RigidTransform<T>) -> f64 {
    let rel = estimate.rotation() * truth.rotation().transpose();
    let trace = rel[(0, 0)] + rel[(1, 1)] + rel[(2, 2)];
    let cos = ((trace.as_f64() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Thresholds below which a registration counts as a success.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessCriterion {
    pub rotation_deg: f64,
    pub translation: f64,
}

impl SuccessCriterion {
    /// Indoor RGB-D fragments: 15° and 0.3 m.
    pub const THREEDMATCH: SuccessCriterion = SuccessCriterion {
        rotation_deg: 15.0,
        translation: 0.3,
    };
    /// Outdoor LiDAR odometry: 2° and 0.6 m.
    pub const KITTI: SuccessCriterion = SuccessCriterion {
        rotation_deg: 2.0,
        translation: 0.6,
    };

    pub fn new(rotation_deg: f64, translation: f64) -> Result<Self> {
        if !(rotation_deg > 0.0 && translation > 0.0) {
            return Err(Error::param("success thresholds must be positive"));
        }
        Ok(Self {
            rotation_deg,
            translation,
        })
    }

    /// Looks up a named preset (`3dmatch` or `kitti`).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "3dmatch" => Some(Self::THREEDMATCH),
            "kitti" => Some(Self::KITTI),
            _ => None,
        }
    }

    /// Both errors strictly below their thresholds.
    pub fn is_success(&self, e: &RegistrationError) -> bool {
        e.rotation_deg < self.rotation_deg && e.translation < self.translation
    }
}

pub fn success_rate(errors: &[RegistrationError], criterion: &SuccessCriterion) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::param("success rate of an empty list"));
    }
    if !(criterion.rotation_deg > 0.0 && criterion.translation > 0.0) {
        return Err(Error::param("success thresholds must be positive"));
    }
    let ok = errors.iter().filter(|e| criterion.is_success(e)).count();
    Ok(ok as f64 / errors.len() as f64)
}
