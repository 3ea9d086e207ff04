//! Preprocessing and augmentation transforms, and their construction from
//! YAML configuration blocks of the form
//!
//! ```yaml
//! data:
//!   pre_transforms:
//!     - transform: NormalizeScale
//!     - transform: GridSampling3D
//!       params:
//!         size: 0.02
//!   train_transforms:
//!     - transform: FixedPoints
//!       lparams: [2048]
//! ```
//!
//! Each entry names a registered transform and passes its arguments either
//! by keyword (`params`) or positionally (`lparams`).

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_yaml::{Mapping, Value};

use crate::error::{Error, Result};
use crate::geometry::{norm, PointCloud, RigidTransform};
use crate::scalar::Real;
use crate::spatial::{grid_subsample, LabelMode};

/// Centers the cloud on its centroid and scales it into the unit sphere.
/// A cloud whose points all coincide is only centered.
pub fn normalize_scale<T: Real>(cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    let c = cloud
        .centroid()
        .ok_or_else(|| Error::param("cannot normalize an empty cloud"))?;
    let centered: Vec<[T; 3]> = cloud
        .positions()
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = centered.iter().map(norm).fold(T::zero(), T::max);
    let scale = if max_norm > T::zero() { max_norm } else { T::one() };
    let scaled = centered
        .into_iter()
        .map(|p| [p[0] / scale, p[1] / scale, p[2] / scale])
        .collect();
    cloud.clone().with_positions(scaled)
}

/// Resamples to exactly `n` points: without replacement when the cloud has
/// at least `n` points, uniformly with replacement otherwise.
pub fn fixed_points<T: Real, R: Rng + ?Sized>(cloud: &PointCloud<T>, n: usize, rng: &mut R) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(Error::param("fixed point count must be at least 1"));
    }
    if cloud.is_empty() {
        return Err(Error::param("cannot resample an empty cloud"));
    }
    let len = cloud.len();
    let indices: Vec<usize> = if len >= n {
        rand::seq::index::sample(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    };
    Ok(cloud.select(&indices))
}

/// Adds clipped Gaussian jitter to every coordinate.
pub fn random_noise<T: Real, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if !(sigma >= 0.0) || !(clip >= 0.0) {
        return Err(Error::param(format!("noise sigma {sigma} and clip {clip} must be nonnegative")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let positions = cloud
        .positions()
        .iter()
        .map(|p| {
            let mut q = *p;
            for c in &mut q {
                *c += T::lit(normal.sample(rng).clamp(-clip, clip));
            }
            q
        })
        .collect();
    cloud.clone().with_positions(positions)
}

/// Rotation about the vertical axis by an angle drawn uniformly from [0, 2π).
pub fn random_rotation_z<T: Real, R: Rng + ?Sized>(rng: &mut R) -> RigidTransform<T> {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    RigidTransform::rotation_z(T::lit(angle))
}

pub fn random_rotate_z<T: Real, R: Rng + ?Sized>(cloud: &PointCloud<T>, rng: &mut R) -> PointCloud<T> {
    random_rotation_z(rng).apply(cloud)
}

/// One configured transform.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    NormalizeScale,
    GridSampling3D { size: f64 },
    FixedPoints { num: usize },
    RandomNoise { sigma: f64, clip: f64 },
    RandomRotateZ,
}

/// Names accepted in the `transform:` field.
pub const REGISTERED_TRANSFORMS: [&str; 5] = [
    "NormalizeScale",
    "GridSampling3D",
    "FixedPoints",
    "RandomNoise",
    "RandomRotateZ",
];

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::NormalizeScale => "NormalizeScale",
            Transform::GridSampling3D { .. } => "GridSampling3D",
            Transform::FixedPoints { .. } => "FixedPoints",
            Transform::RandomNoise { .. } => "RandomNoise",
            Transform::RandomRotateZ => "RandomRotateZ",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Transform::FixedPoints { .. } | Transform::RandomNoise { .. } | Transform::RandomRotateZ
        )
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(&self, cloud: &PointCloud<T>, rng: &mut R) -> Result<PointCloud<T>> {
        match *self {
            Transform::NormalizeScale => normalize_scale(cloud),
            Transform::GridSampling3D { size } => {
                grid_subsample(cloud, T::lit(size), LabelMode::Majority).map(|(c, _)| c)
            }
            Transform::FixedPoints { num } => fixed_points(cloud, num, rng),
            Transform::RandomNoise { sigma, clip } => random_noise(cloud, sigma, clip, rng),
            Transform::RandomRotateZ => Ok(random_rotate_z(cloud, rng)),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::GridSampling3D { size } => write!(f, "GridSampling3D({size})"),
            Transform::FixedPoints { num } => write!(f, "FixedPoints({num})"),
            Transform::RandomNoise { sigma, clip } => write!(f, "RandomNoise({sigma}, {clip})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Ordered list of transforms applied first to last.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pipeline {
    transforms: Vec<Transform>,
}

impl Pipeline {
    pub fn new(transforms: Vec<Transform>) -> Self {
        Self { transforms }
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(&self, cloud: &PointCloud<T>, rng: &mut R) -> Result<PointCloud<T>> {
        let mut current = cloud.clone();
        for t in &self.transforms {
            current = t.apply(&current, rng)?;
        }
        Ok(current)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.transforms.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// The three transform lists of a `data:` block. Missing lists are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTransforms {
    pub pre_transforms: Pipeline,
    pub train_transforms: Pipeline,
    pub test_transforms: Pipeline,
}

impl DataTransforms {
    /// Reads `pre_transforms`, `train_transforms` and `test_transforms` from a
    /// YAML mapping (the value of the `data:` key).
    pub fn from_value(data: &Value) -> Result<Self> {
        let map = match data {
            Value::Mapping(m) => m,
            Value::Null => return Ok(Self::default()),
            _ => return Err(config_err("data", "expected a mapping")),
        };
        let list = |key: &str| -> Result<Pipeline> {
            match map.get(key) {
                None | Some(Value::Null) => Ok(Pipeline::default()),
                Some(v) => parse_list(v, key),
            }
        };
        Ok(Self {
            pre_transforms: list("pre_transforms")?,
            train_transforms: list("train_transforms")?,
            test_transforms: list("test_transforms")?,
        })
    }
}

/// Parses a document containing a top-level `data:` block.
pub fn parse_data_block(text: &str) -> Result<DataTransforms> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| config_err("document", &e.to_string()))?;
    match doc.get("data") {
        Some(data) => DataTransforms::from_value(data),
        None => Err(config_err("document", "missing `data` block")),
    }
}

/// Parses a YAML sequence of transform entries into a pipeline.
pub fn parse_pipeline(text: &str) -> Result<Pipeline> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| config_err("document", &e.to_string()))?;
    match doc {
        Value::Null => Ok(Pipeline::default()),
        v => parse_list(&v, "transforms"),
    }
}

fn config_err(entry: &str, reason: &str) -> Error {
    Error::Config {
        entry: entry.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_list(value: &Value, list_name: &str) -> Result<Pipeline> {
    let items = value
        .as_sequence()
        .ok_or_else(|| config_err(list_name, "expected a list of transform entries"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_entry(item, &format!("{list_name}[{i}]")))
        .collect::<Result<Vec<_>>>()
        .map(Pipeline::new)
}

/// Arguments of one entry, keyword or positional.
enum Args<'a> {
    None,
    Keyword(&'a Mapping),
    Positional(&'a [Value]),
}

fn parse_entry(item: &Value, at: &str) -> Result<Transform> {
    let map = item
        .as_mapping()
        .ok_or_else(|| config_err(at, "expected a mapping with a `transform` key"))?;
    let name = map
        .get("transform")
        .and_then(Value::as_str)
        .ok_or_else(|| config_err(at, "missing `transform` name"))?
        .trim();
    let at = format!("{at} ({name})");
    for key in map.keys() {
        let k = key.as_str().unwrap_or("<non-string key>");
        if !matches!(k, "transform" | "params" | "lparams") {
            return Err(config_err(&at, &format!("unexpected key `{k}`")));
        }
    }
    let args = match (map.get("params"), map.get("lparams")) {
        (Some(_), Some(_)) => return Err(config_err(&at, "both `params` and `lparams` given")),
        (Some(Value::Mapping(m)), None) => Args::Keyword(m),
        (Some(Value::Null), None) | (None, None) => Args::None,
        (Some(_), None) => return Err(config_err(&at, "`params` must be a mapping")),
        (None, Some(Value::Sequence(s))) => Args::Positional(s),
        (None, Some(_)) => return Err(config_err(&at, "`lparams` must be a list")),
    };
    let reader = ArgReader { at: &at, args };
    let t = match name {
        "NormalizeScale" => {
            reader.expect(&[])?;
            Transform::NormalizeScale
        }
        "GridSampling3D" => {
            reader.expect(&["size"])?;
            let size = reader.required_f64(0, "size")?;
            if !(size > 0.0) {
                return Err(config_err(&at, "`size` must be positive"));
            }
            Transform::GridSampling3D { size }
        }
        "FixedPoints" => {
            reader.expect(&["num"])?;
            let num = reader.required_usize(0, "num")?;
            if num == 0 {
                return Err(config_err(&at, "`num` must be at least 1"));
            }
            Transform::FixedPoints { num }
        }
        "RandomNoise" => {
            reader.expect(&["sigma", "clip"])?;
            let sigma = reader.optional_f64(0, "sigma")?.unwrap_or(0.01);
            let clip = reader.optional_f64(1, "clip")?.unwrap_or(0.05);
            if !(sigma >= 0.0 && clip >= 0.0) {
                return Err(config_err(&at, "`sigma` and `clip` must be nonnegative"));
            }
            Transform::RandomNoise { sigma, clip }
        }
        "RandomRotateZ" => {
            reader.expect(&[])?;
            Transform::RandomRotateZ
        }
        other => {
            return Err(config_err(
                &at,
                &format!(
                    "unknown transform `{other}` (registered: {})",
                    REGISTERED_TRANSFORMS.join(", ")
                ),
            ))
        }
    };
    Ok(t)
}

struct ArgReader<'a> {
    at: &'a str,
    args: Args<'a>,
}

impl ArgReader<'_> {
    /// Rejects unknown keywords and too many positional values.
    fn expect(&self, names: &[&str]) -> Result<()> {
        match self.args {
            Args::None => Ok(()),
            Args::Keyword(m) => {
                for key in m.keys() {
                    let k = key.as_str().unwrap_or("<non-string key>");
                    if !names.contains(&k) {
                        return Err(config_err(self.at, &format!("unknown parameter `{k}`")));
                    }
                }
                Ok(())
            }
            Args::Positional(v) if v.len() > names.len() => Err(config_err(
                self.at,
                &format!("expected at most {} positional parameters, got {}", names.len(), v.len()),
            )),
            Args::Positional(_) => Ok(()),
        }
    }

    fn get(&self, pos: usize, name: &str) -> Option<&Value> {
        match self.args {
            Args::None => None,
            Args::Keyword(m) => m.get(name),
            Args::Positional(v) => v.get(pos),
        }
    }

    fn optional_f64(&self, pos: usize, name: &str) -> Result<Option<f64>> {
        self.get(pos, name)
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| config_err(self.at, &format!("`{name}` must be a number")))
            })
            .transpose()
    }

    fn required_f64(&self, pos: usize, name: &str) -> Result<f64> {
        self.optional_f64(pos, name)?
            .ok_or_else(|| config_err(self.at, &format!("missing parameter `{name}`")))
    }

    fn required_usize(&self, pos: usize, name: &str) -> Result<usize> {
        let v = self
            .get(pos, name)
            .ok_or_else(|| config_err(self.at, &format!("missing parameter `{name}`")))?;
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| config_err(self.at, &format!("`{name}` must be a nonnegative integer")))
    }
}
