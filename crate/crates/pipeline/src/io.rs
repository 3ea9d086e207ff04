//! File formats: ASCII PLY and the little-endian `TP3C` / `TP3F` / `TP3P`
//! binaries, plus small text formats for transforms and boxes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix4;
use ndarray::Array2;
use tp3_core::metrics::DetectionRecord;
use tp3_core::{AxisAlignedBox, Cloud, Transform};

use crate::error::{io_err, PipelineError, Result};

const CLOUD_MAGIC: &[u8; 4] = b"TP3C";
const FEATURE_MAGIC: &[u8; 4] = b"TP3F";
const PREDICTION_MAGIC: &[u8; 4] = b"TP3P";

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(
                self.path,
                self.buf.len(),
                format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        if self.take(4, "magic")? != want {
            return Err(format_err(self.path, at, format!("expected magic {:?}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| format_err(self.path, self.pos, "size overflow"))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| PipelineError::Validation(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Reads a `TP3C` binary or ASCII PLY cloud, chosen by the file's first bytes.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<Cloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(CLOUD_MAGIC) {
        decode_tp3c(&bytes, path)
    } else if bytes.starts_with(b"ply") {
        decode_ply(&bytes, path)
    } else {
        Err(format_err(path, 0, "neither a PLY file nor a TP3C cloud"))
    }
}

/// Writes ASCII PLY for a `.ply` extension and `TP3C` otherwise.
pub fn write_cloud(path: impl AsRef<Path>, cloud: &Cloud) -> Result<()> {
    let path = path.as_ref();
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let bytes = if is_ply { encode_ply(cloud).into_bytes() } else { encode_tp3c(cloud)? };
    write_bytes(path, &bytes)
}

fn encode_tp3c(cloud: &Cloud) -> Result<Vec<u8>> {
    let (n, f) = (cloud.len(), cloud.feature_dim());
    let mut out = Vec::with_capacity(12 + n * (12 + 4 * f + 4));
    out.extend_from_slice(CLOUD_MAGIC);
    push_u32(&mut out, n, "point count")?;
    push_u32(&mut out, f, "feature dimension")?;
    for p in cloud.positions() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(feat) = cloud.features() {
        for v in feat.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(labels) = cloud.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_tp3c(bytes: &[u8], path: &Path) -> Result<Cloud> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(CLOUD_MAGIC)?;
    let n = r.u32("point count")?;
    let f = r.u32("feature dimension")?;
    let pos_at = r.pos;
    let raw = r.f32s(n * 3, "positions")?;
    let positions: Vec<[f64; 3]> = raw
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    let mut cloud = Cloud::new(positions).map_err(|e| format_err(path, pos_at, e.to_string()))?;
    if f > 0 {
        let feat = r.f32s(n * f, "features")?;
        let feat = Array2::from_shape_vec((n, f), feat.into_iter().map(f64::from).collect()).unwrap();
        cloud = cloud.with_features(feat)?;
    }
    match r.remaining() {
        0 => {}
        rest if rest == 4 * n => {
            let labels = r
                .take(4 * n, "labels")?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cloud = cloud.with_labels(labels)?;
        }
        rest => {
            return Err(format_err(
                path,
                r.pos,
                format!("{rest} trailing bytes; labels need exactly {}", 4 * n),
            ))
        }
    }
    Ok(cloud)
}

fn encode_ply(cloud: &Cloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    for j in 0..cloud.feature_dim() {
        let _ = writeln!(s, "property double f{j}");
    }
    if cloud.labels().is_some() {
        s.push_str("property int label\n");
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(feat) = cloud.features() {
            for v in feat.row(i) {
                let _ = write!(s, " {v}");
            }
        }
        if let Some(l) = cloud.labels() {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<(String, bool)>,
    has_list: bool,
}

fn is_integer_type(t: &str) -> Option<bool> {
    match t {
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16" | "uint16" | "int32"
        | "uint32" => Some(true),
        "float" | "double" | "float32" | "float64" => Some(false),
        _ => None,
    }
}

/// Lines of `bytes` with their starting offsets.
fn lines_with_offsets(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let mut pos = 0;
    std::iter::from_fn(move || {
        if pos >= bytes.len() {
            return None;
        }
        let start = pos;
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |k| pos + k);
        pos = end + 1;
        let line = &bytes[start..end];
        Some((start, line.strip_suffix(b"\r").unwrap_or(line)))
    })
}

fn decode_ply(bytes: &[u8], path: &Path) -> Result<Cloud> {
    let mut lines = lines_with_offsets(bytes);
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    let mut first = true;
    for (at, raw) in lines.by_ref() {
        let line = std::str::from_utf8(raw).map_err(|_| format_err(path, at, "header is not UTF-8"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if first {
            if words != ["ply"] {
                return Err(format_err(path, at, "missing `ply` signature"));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", other, _] => return Err(format_err(path, at, format!("unsupported PLY format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| format_err(path, at, format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or_else(|| format_err(path, at, "property before element"))?;
                el.has_list = true;
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| format_err(path, at, "property before element"))?;
                let int = is_integer_type(ty).ok_or_else(|| format_err(path, at, format!("unknown property type `{ty}`")))?;
                el.properties.push((name.to_string(), int));
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(format_err(path, at, format!("unrecognized header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(format_err(path, bytes.len(), "header ends without `end_header`"));
    }
    if !saw_format {
        return Err(format_err(path, 0, "header has no `format` line"));
    }

    let mut positions = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut layout: Option<(usize, [usize; 3], Vec<usize>, Option<usize>)> = None;
    for el in &elements {
        if el.name != "vertex" {
            for k in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| format_err(path, bytes.len(), format!("truncated: element `{}` row {k} missing", el.name)))?;
            }
            continue;
        }
        if el.has_list {
            return Err(format_err(path, 0, "list properties on vertices are not supported"));
        }
        let find = |n: &str| el.properties.iter().position(|p| p.0 == n);
        let xyz = match (find("x"), find("y"), find("z")) {
            (Some(x), Some(y), Some(z)) => [x, y, z],
            _ => return Err(format_err(path, 0, "vertex element lacks x, y, z")),
        };
        let label = find("label");
        if let Some(l) = label {
            if !el.properties[l].1 {
                return Err(format_err(path, 0, "`label` must be an integer property"));
            }
        }
        let feat_cols: Vec<usize> = (0..el.properties.len())
            .filter(|k| !xyz.contains(k) && Some(*k) != label)
            .collect();
        positions.reserve(el.count);
        for k in 0..el.count {
            let (at, raw) = lines
                .next()
                .ok_or_else(|| format_err(path, bytes.len(), format!("truncated: vertex {k} of {} missing", el.count)))?;
            let line = std::str::from_utf8(raw).map_err(|_| format_err(path, at, "vertex row is not UTF-8"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != el.properties.len() {
                return Err(format_err(
                    path,
                    at,
                    format!("vertex {k}: {} values for {} properties", vals.len(), el.properties.len()),
                ));
            }
            let num = |c: usize| -> Result<f64> {
                vals[c]
                    .parse::<f64>()
                    .map_err(|_| format_err(path, at, format!("vertex {k}: bad number `{}`", vals[c])))
            };
            positions.push([num(xyz[0])?, num(xyz[1])?, num(xyz[2])?]);
            for &c in &feat_cols {
                features.push(num(c)?);
            }
            if let Some(l) = label {
                labels.push(
                    vals[l]
                        .parse::<i32>()
                        .map_err(|_| format_err(path, at, format!("vertex {k}: bad label `{}`", vals[l])))?,
                );
            }
        }
        layout = Some((el.count, xyz, feat_cols, label));
    }
    let mut cloud = Cloud::new(positions).map_err(|e| format_err(path, 0, e.to_string()))?;
    if let Some((n, _, feat_cols, label)) = layout {
        if !feat_cols.is_empty() {
            cloud = cloud.with_features(Array2::from_shape_vec((n, feat_cols.len()), features).unwrap())?;
        }
        if label.is_some() {
            cloud = cloud.with_labels(labels)?;
        }
    }
    Ok(cloud)
}

/// `TP3F`: u32 N, u32 D, then N×D float32 row-major.
pub fn write_features(path: impl AsRef<Path>, feat: &Array2<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 4 * feat.len());
    out.extend_from_slice(FEATURE_MAGIC);
    push_u32(&mut out, feat.nrows(), "row count")?;
    push_u32(&mut out, feat.ncols(), "feature dimension")?;
    for v in feat.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(FEATURE_MAGIC)?;
    let n = r.u32("row count")?;
    let d = r.u32("feature dimension")?;
    let vals = r.f32s(n * d, "features")?;
    if r.remaining() != 0 {
        return Err(format_err(path, r.pos, format!("{} trailing bytes", r.remaining())));
    }
    Ok(Array2::from_shape_vec((n, d), vals.into_iter().map(f64::from).collect()).unwrap())
}

/// Per-region member indices and class probabilities of one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPrediction {
    pub members: Vec<i64>,
    pub prob: Array2<f64>,
}

/// `TP3P`: u32 region count, then per region u32 members, u32 C, the member
/// indices as i64 and the probability rows as float32.
pub fn write_predictions(path: impl AsRef<Path>, regions: &[RegionPrediction]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(PREDICTION_MAGIC);
    push_u32(&mut out, regions.len(), "region count")?;
    for (r, reg) in regions.iter().enumerate() {
        if reg.prob.nrows() != reg.members.len() {
            return Err(PipelineError::Validation(format!(
                "region {r}: {} members but {} probability rows",
                reg.members.len(),
                reg.prob.nrows()
            )));
        }
        push_u32(&mut out, reg.members.len(), "member count")?;
        push_u32(&mut out, reg.prob.ncols(), "class count")?;
        for m in &reg.members {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for v in reg.prob.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_bytes(path.as_ref(), &out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<RegionPrediction>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(PREDICTION_MAGIC)?;
    let count = r.u32("region count")?;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for k in 0..count {
        let m = r.u32(&format!("region {k} member count"))?;
        let c = r.u32(&format!("region {k} class count"))?;
        let members = r
            .take(m * 8, &format!("region {k} members"))?
            .chunks_exact(8)
            .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let prob = r.f32s(m * c, &format!("region {k} probabilities"))?;
        out.push(RegionPrediction {
            members,
            prob: Array2::from_shape_vec((m, c), prob.into_iter().map(f64::from).collect()).unwrap(),
        });
    }
    if r.remaining() != 0 {
        return Err(format_err(path, r.pos, format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

fn text_lines(path: &Path) -> Result<Vec<(usize, usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut offset = 0;
    let mut out = Vec::new();
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push((n + 1, offset, body.to_string()));
        }
        offset += line.len();
    }
    Ok(out)
}

/// A rigid transform as 16 whitespace-separated numbers (4×4 row-major,
/// last row `0 0 0 1`).
pub fn read_transform(path: impl AsRef<Path>) -> Result<Transform> {
    let path = path.as_ref();
    let mut vals = Vec::with_capacity(16);
    for (_, at, line) in text_lines(path)? {
        for w in line.split_whitespace() {
            vals.push(w.parse::<f64>().map_err(|_| format_err(path, at, format!("bad number `{w}`")))?);
        }
    }
    if vals.len() != 16 {
        return Err(format_err(path, 0, format!("expected 16 numbers, found {}", vals.len())));
    }
    Ok(Transform::from_homogeneous(&Matrix4::from_row_slice(&vals))?)
}

pub fn write_transform(path: impl AsRef<Path>, t: &Transform) -> Result<()> {
    let m = t.to_homogeneous();
    let mut s = String::new();
    for i in 0..4 {
        let _ = writeln!(s, "{} {} {} {}", m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]);
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

/// Boxes, one per line: `scene class xmin ymin zmin xmax ymax zmax [score]`.
/// Scenes are numbered from 0.
pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<(usize, AxisAlignedBox<f64>)>> {
    let path = path.as_ref();
    text_lines(path)?
        .into_iter()
        .map(|(n, at, line)| {
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.len() != 8 && w.len() != 9 {
                return Err(format_err(path, at, format!("line {n}: expected 8 or 9 fields, found {}", w.len())));
            }
            let bad = |s: &str| format_err(path, at, format!("line {n}: bad field `{s}`"));
            let scene: usize = w[0].parse().map_err(|_| bad(w[0]))?;
            let class: i32 = w[1].parse().map_err(|_| bad(w[1]))?;
            let mut v = [0.0; 7];
            for (k, s) in w[2..].iter().enumerate() {
                v[k] = s.parse().map_err(|_| bad(s))?;
            }
            let mut b = AxisAlignedBox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], class)
                .map_err(|e| format_err(path, at, format!("line {n}: {e}")))?;
            if w.len() == 9 {
                b = b.with_score(v[6]).map_err(|e| format_err(path, at, format!("line {n}: {e}")))?;
            }
            Ok((scene, b))
        })
        .collect()
}

/// Groups predicted and ground-truth boxes into per-scene records.
pub fn detection_records(
    predictions: Vec<(usize, AxisAlignedBox<f64>)>,
    ground_truth: Vec<(usize, AxisAlignedBox<f64>)>,
) -> Vec<DetectionRecord<f64>> {
    let scenes = predictions.iter().chain(&ground_truth).map(|(s, _)| s + 1).max().unwrap_or(0);
    let mut records = vec![DetectionRecord::default(); scenes];
    for (s, b) in predictions {
        records[s].predictions.push(b);
    }
    for (s, b) in ground_truth {
        records[s].ground_truth.push(b);
    }
    records
}
