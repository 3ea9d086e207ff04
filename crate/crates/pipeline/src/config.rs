//! Run configuration loaded from YAML.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use sha2::{Digest, Sha256};
use tp3_core::collate::ConvType;
use tp3_core::metrics::SuccessCriterion;
use tp3_core::protocol::{DEFAULT_GRID_SPACING, DEFAULT_SPHERES_PER_EPOCH, DEFAULT_SPHERE_RADIUS};
use tp3_core::registration::DEFAULT_RANSAC_ITERATIONS;
use tp3_core::transforms::DataTransforms;

use crate::error::{io_err, PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Segmentation,
    Detection,
    Registration,
}

/// Encoder levels: support points per level and, per level, one or more
/// radii with a neighbour cap each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    pub npoint: Vec<usize>,
    pub radii: Vec<Vec<f64>>,
    pub nsamples: Vec<Vec<usize>>,
}

impl Default for LevelsConfig {
    fn default() -> Self {
        Self {
            npoint: vec![512, 128],
            radii: vec![vec![0.2], vec![0.4]],
            nsamples: vec![vec![64], vec![64]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub sphere_radius: f64,
    pub spheres_per_epoch: usize,
    pub grid_spacing: f64,
    pub batch_size: usize,
    pub voting_runs: usize,
    pub conv_type: String,
    /// Points per instance for the dense layout.
    pub dense_points: usize,
    /// Voxel size for the sparse layout.
    pub voxel_size: f64,
    /// Grid cell used to subsample a scene before inference.
    pub subsample: f64,
    pub levels: LevelsConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            sphere_radius: DEFAULT_SPHERE_RADIUS,
            spheres_per_epoch: DEFAULT_SPHERES_PER_EPOCH,
            grid_spacing: DEFAULT_GRID_SPACING,
            batch_size: 8,
            voting_runs: 1,
            conv_type: "PARTIAL_DENSE".into(),
            dense_points: 4096,
            voxel_size: 0.05,
            subsample: 0.04,
            levels: LevelsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub iterations: usize,
    /// Defaults to twice the voxel size.
    pub inlier_dist: Option<f64>,
    pub voxel_size: f64,
    pub mutual: bool,
    /// Preset name (`3dmatch`, `kitti`) or `custom`.
    pub criterion: String,
    pub rotation_deg: Option<f64>,
    pub translation: Option<f64>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_RANSAC_ITERATIONS,
            inlier_dist: None,
            voxel_size: 0.025,
            mutual: false,
            criterion: "3dmatch".into(),
            rotation_deg: None,
            translation: None,
        }
    }
}

impl RegistrationConfig {
    pub fn inlier_dist(&self) -> f64 {
        self.inlier_dist.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn success_criterion(&self) -> Result<SuccessCriterion> {
        let mut c = match self.criterion.as_str() {
            "custom" => SuccessCriterion::new(
                self.rotation_deg.unwrap_or(f64::NAN),
                self.translation.unwrap_or(f64::NAN),
            )
            .map_err(|_| PipelineError::Config("custom criterion needs positive rotation_deg and translation".into()))?,
            name => SuccessCriterion::preset(name)
                .ok_or_else(|| PipelineError::Config(format!("unknown success criterion `{name}`")))?,
        };
        if let Some(r) = self.rotation_deg {
            c.rotation_deg = r;
        }
        if let Some(t) = self.translation {
            c.translation = t;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub iou_thresholds: Vec<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    task: Task,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    queue_capacity: Option<usize>,
    #[serde(default)]
    data: Value,
    #[serde(default)]
    protocol: ProtocolConfig,
    #[serde(default)]
    registration: RegistrationConfig,
    #[serde(default)]
    detection: DetectionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub workers: usize,
    queue_capacity: Option<usize>,
    pub data: DataTransforms,
    pub protocol: ProtocolConfig,
    pub registration: RegistrationConfig,
    pub detection: DetectionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_yaml("{}").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_yaml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let cfg = Self {
            task: raw.task,
            seed: raw.seed,
            workers: raw.workers.unwrap_or(1),
            queue_capacity: raw.queue_capacity,
            data: DataTransforms::from_value(&raw.data)?,
            protocol: raw.protocol,
            registration: raw.registration,
            detection: raw.detection,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_yaml(&text)
    }

    /// Prefetch depth; defaults to twice the worker count.
    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity.unwrap_or(2 * self.workers)
    }

    pub fn set_queue_capacity(&mut self, capacity: Option<usize>) {
        self.queue_capacity = capacity;
    }

    pub fn conv_type(&self) -> ConvType {
        self.protocol.conv_type.parse().expect("validated at load")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.queue_capacity == Some(0) {
            return bad("queue_capacity must be at least 1".into());
        }
        for (name, v) in [
            ("protocol.sphere_radius", p.sphere_radius),
            ("protocol.grid_spacing", p.grid_spacing),
            ("protocol.voxel_size", p.voxel_size),
            ("protocol.subsample", p.subsample),
            ("registration.voxel_size", self.registration.voxel_size),
            ("registration.inlier_dist", self.registration.inlier_dist()),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("protocol.spheres_per_epoch", p.spheres_per_epoch),
            ("protocol.batch_size", p.batch_size),
            ("protocol.voting_runs", p.voting_runs),
            ("protocol.dense_points", p.dense_points),
            ("registration.iterations", self.registration.iterations),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if let Err(e) = p.conv_type.parse::<ConvType>() {
            return bad(format!("protocol.conv_type: {e}"));
        }
        let l = &p.levels;
        if l.radii.len() != l.npoint.len() || l.nsamples.len() != l.npoint.len() {
            return bad(format!(
                "protocol.levels: {} npoint entries, {} radii lists, {} nsamples lists",
                l.npoint.len(),
                l.radii.len(),
                l.nsamples.len()
            ));
        }
        for (i, (r, k)) in l.radii.iter().zip(&l.nsamples).enumerate() {
            if r.len() != k.len() || r.is_empty() {
                return bad(format!("protocol.levels[{i}]: radii and nsamples must be nonempty and of equal length"));
            }
            if r.iter().any(|r| !(*r > 0.0)) || k.contains(&0) || l.npoint[i] == 0 {
                return bad(format!("protocol.levels[{i}]: sizes and radii must be positive"));
            }
        }
        if self.detection.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("detection.iou_thresholds must lie in [0, 1]".into());
        }
        self.registration.success_criterion()?;
        Ok(())
    }

    /// Canonical JSON of every setting that affects results. `workers` and
    /// the queue depth are excluded: results do not depend on them.
    pub fn canonical(&self) -> serde_json::Value {
        let list = |p: &tp3_core::transforms::Pipeline| -> Vec<String> { p.transforms().iter().map(|t| t.to_string()).collect() };
        serde_json::json!({
            "task": self.task,
            "seed": self.seed,
            "data": {
                "pre_transforms": list(&self.data.pre_transforms),
                "train_transforms": list(&self.data.train_transforms),
                "test_transforms": list(&self.data.test_transforms),
            },
            "protocol": self.protocol,
            "registration": self.registration,
            "detection": self.detection,
        })
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}
