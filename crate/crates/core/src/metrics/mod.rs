//! Segmentation, detection and registration scores.

mod detection;
mod registration;
mod segmentation;

pub use detection::{box_iou_3d, evaluate_detection, DetectionRecord, DetectionScores};
pub use registration::{registration_error, rotation_error_deg, success_rate, RegistrationError, SuccessCriterion};
pub use segmentation::{segmentation_scores, ConfusionMatrix, SegmentationScores};
