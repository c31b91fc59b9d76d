//! Detection and ground-truth records, frame-indexed sets, and the
//! newline-delimited JSON formats they are exchanged in.
//!
//! Record schemas, one JSON object per line:
//!
//! | kind    | fields                                                              |
//! |---------|---------------------------------------------------------------------|
//! | `det3d` | `frame_id, class, score, logit?, center:[x,y,z], size:[l,w,h], yaw, source` |
//! | `det2d` | `frame_id, camera_id, class, score, logit?, bbox:[x1,y1,x2,y2]`     |
//! | `gt`    | `frame_id, class, center, size, yaw, visibility?`                   |
//! | `gt2d`  | `frame_id, camera_id, class, bbox`                                  |
//!
//! Scores are written rounded to 9 significant digits; every other number
//! uses the shortest representation that parses back to the same `f64`.

use crate::geometry::{Box2D, Box3D, Vec3};
use crate::par;
use crate::taxonomy::Taxonomy;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Scores are clamped to this distance from 0 and 1 before inverting the
/// sigmoid.
pub const LOGIT_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DetectionsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: invalid record: {reason}")]
    Invalid {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(
        "frame '{frame_id}': class '{class}' is not valid for {kind} records under the taxonomy"
    )]
    UnknownClass {
        frame_id: String,
        class: String,
        kind: &'static str,
    },
    #[error("{path}: schema error: {reason}")]
    Schema { path: String, reason: String },
}

/// Inverse sigmoid of a score, clamped away from 0 and 1.
pub fn score_to_logit(score: f64) -> f64 {
    let s = score.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (s / (1.0 - s)).ln()
}

/// Rounds to 9 significant decimal digits.
pub fn quantize_score(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn ser_score<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(quantize_score(*x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Lidar,
    Rgb3d,
    Fused,
}

/// Visibility bucket (fraction of the object visible across cameras).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Visibility {
    #[serde(rename = "0-40")]
    V0To40,
    #[serde(rename = "40-60")]
    V40To60,
    #[serde(rename = "60-80")]
    V60To80,
    #[serde(rename = "80-100")]
    V80To100,
}

impl Visibility {
    pub const ALL: [Visibility; 4] = [Self::V0To40, Self::V40To60, Self::V60To80, Self::V80To100];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::V0To40 => "0-40",
            Self::V40To60 => "40-60",
            Self::V60To80 => "60-80",
            Self::V80To100 => "80-100",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub frame_id: String,
    pub box3d: Box3D,
    pub class: String,
    pub score: f64,
    pub logit: Option<f64>,
    pub source: Source,
}

impl Detection3D {
    /// Stored logit, or the clamped inverse sigmoid of the score.
    pub fn logit_or_derived(&self) -> f64 {
        self.logit.unwrap_or_else(|| score_to_logit(self.score))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub frame_id: String,
    pub camera_id: String,
    pub box2d: Box2D,
    pub class: String,
    pub score: f64,
    pub logit: Option<f64>,
}

impl Detection2D {
    pub fn logit_or_derived(&self) -> f64 {
        self.logit.unwrap_or_else(|| score_to_logit(self.score))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth3D {
    pub frame_id: String,
    pub box3d: Box3D,
    pub class: String,
    pub visibility: Option<Visibility>,
}

impl GroundTruth3D {
    pub fn ego_distance(&self) -> f64 {
        self.box3d.ego_distance()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth2D {
    pub frame_id: String,
    pub camera_id: String,
    pub box2d: Box2D,
    pub class: String,
}

#[derive(Serialize, Deserialize)]
struct Det3dWire {
    frame_id: String,
    class: String,
    #[serde(serialize_with = "ser_score")]
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logit: Option<f64>,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    #[serde(default)]
    source: Source,
}

#[derive(Serialize, Deserialize)]
struct Det2dWire {
    frame_id: String,
    camera_id: String,
    class: String,
    #[serde(serialize_with = "ser_score")]
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logit: Option<f64>,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct Gt3dWire {
    frame_id: String,
    class: String,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visibility: Option<Visibility>,
}

#[derive(Serialize, Deserialize)]
struct Gt2dWire {
    frame_id: String,
    camera_id: String,
    class: String,
    bbox: [f64; 4],
}

fn check_frame(frame_id: &str) -> Result<(), String> {
    if frame_id.is_empty() {
        Err("frame_id must be non-empty".into())
    } else {
        Ok(())
    }
}

fn check_score(score: f64, logit: Option<f64>) -> Result<(), String> {
    if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
        return Err(format!("score {score} is outside [0, 1]"));
    }
    if let Some(l) = logit {
        if !l.is_finite() {
            return Err("logit must be finite".into());
        }
    }
    Ok(())
}

fn box3d_from(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Box3D, String> {
    Box3D::new(Vec3::from(center), size[0], size[1], size[2], yaw).map_err(|e| e.to_string())
}

fn box2d_from(b: [f64; 4]) -> Result<Box2D, String> {
    Box2D::new(b[0], b[1], b[2], b[3]).map_err(|e| e.to_string())
}

fn center_of(b: &Box3D) -> [f64; 3] {
    [b.center.x, b.center.y, b.center.z]
}

/// A frame-scoped record with a JSONL representation.
pub trait Record: Clone + Send + Sync + Sized {
    /// Schema name used in messages.
    const KIND: &'static str;

    fn frame_id(&self) -> &str;
    fn class(&self) -> &str;

    /// Whether `class` is acceptable for this record kind under `tax`.
    fn class_allowed(tax: &Taxonomy, class: &str) -> bool;

    fn to_json_line(&self) -> String;
    fn from_json_line(line: &str) -> Result<Result<Self, String>, serde_json::Error>;
}

impl Record for Detection3D {
    const KIND: &'static str = "det3d";

    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn class(&self) -> &str {
        &self.class
    }
    fn class_allowed(tax: &Taxonomy, class: &str) -> bool {
        tax.level(class).is_some()
    }

    fn to_json_line(&self) -> String {
        let b = &self.box3d;
        let w = Det3dWire {
            frame_id: self.frame_id.clone(),
            class: self.class.clone(),
            score: self.score,
            logit: self.logit,
            center: center_of(b),
            size: [b.length, b.width, b.height],
            yaw: b.yaw,
            source: self.source,
        };
        serde_json::to_string(&w).expect("record serializes")
    }

    fn from_json_line(line: &str) -> Result<Result<Self, String>, serde_json::Error> {
        let w: Det3dWire = serde_json::from_str(line)?;
        Ok((|| {
            check_frame(&w.frame_id)?;
            check_score(w.score, w.logit)?;
            Ok(Detection3D {
                box3d: box3d_from(w.center, w.size, w.yaw)?,
                frame_id: w.frame_id,
                class: w.class,
                score: w.score,
                logit: w.logit,
                source: w.source,
            })
        })())
    }
}

impl Record for Detection2D {
    const KIND: &'static str = "det2d";

    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn class(&self) -> &str {
        &self.class
    }
    fn class_allowed(tax: &Taxonomy, class: &str) -> bool {
        tax.level(class).is_some()
    }

    fn to_json_line(&self) -> String {
        let w = Det2dWire {
            frame_id: self.frame_id.clone(),
            camera_id: self.camera_id.clone(),
            class: self.class.clone(),
            score: self.score,
            logit: self.logit,
            bbox: self.box2d.as_array(),
        };
        serde_json::to_string(&w).expect("record serializes")
    }

    fn from_json_line(line: &str) -> Result<Result<Self, String>, serde_json::Error> {
        let w: Det2dWire = serde_json::from_str(line)?;
        Ok((|| {
            check_frame(&w.frame_id)?;
            check_score(w.score, w.logit)?;
            Ok(Detection2D {
                box2d: box2d_from(w.bbox)?,
                frame_id: w.frame_id,
                camera_id: w.camera_id,
                class: w.class,
                score: w.score,
                logit: w.logit,
            })
        })())
    }
}

impl Record for GroundTruth3D {
    const KIND: &'static str = "gt";

    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn class(&self) -> &str {
        &self.class
    }
    fn class_allowed(tax: &Taxonomy, class: &str) -> bool {
        tax.is_fine(class)
    }

    fn to_json_line(&self) -> String {
        let b = &self.box3d;
        let w = Gt3dWire {
            frame_id: self.frame_id.clone(),
            class: self.class.clone(),
            center: center_of(b),
            size: [b.length, b.width, b.height],
            yaw: b.yaw,
            visibility: self.visibility,
        };
        serde_json::to_string(&w).expect("record serializes")
    }

    fn from_json_line(line: &str) -> Result<Result<Self, String>, serde_json::Error> {
        let w: Gt3dWire = serde_json::from_str(line)?;
        Ok((|| {
            check_frame(&w.frame_id)?;
            Ok(GroundTruth3D {
                box3d: box3d_from(w.center, w.size, w.yaw)?,
                frame_id: w.frame_id,
                class: w.class,
                visibility: w.visibility,
            })
        })())
    }
}

impl Record for GroundTruth2D {
    const KIND: &'static str = "gt2d";

    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn class(&self) -> &str {
        &self.class
    }
    fn class_allowed(tax: &Taxonomy, class: &str) -> bool {
        tax.is_fine(class)
    }

    fn to_json_line(&self) -> String {
        let w = Gt2dWire {
            frame_id: self.frame_id.clone(),
            camera_id: self.camera_id.clone(),
            class: self.class.clone(),
            bbox: self.box2d.as_array(),
        };
        serde_json::to_string(&w).expect("record serializes")
    }

    fn from_json_line(line: &str) -> Result<Result<Self, String>, serde_json::Error> {
        let w: Gt2dWire = serde_json::from_str(line)?;
        Ok((|| {
            check_frame(&w.frame_id)?;
            Ok(GroundTruth2D {
                box2d: box2d_from(w.bbox)?,
                frame_id: w.frame_id,
                camera_id: w.camera_id,
                class: w.class,
            })
        })())
    }
}

/// Records grouped by frame. Frames iterate in first-seen order and records
/// keep their insertion order within a frame.
#[derive(Debug, Clone)]
pub struct RecordSet<T> {
    frames: IndexMap<String, Vec<T>>,
    len: usize,
}

pub type DetectionSet = RecordSet<Detection3D>;
pub type Detection2DSet = RecordSet<Detection2D>;
pub type GroundTruthSet = RecordSet<GroundTruth3D>;
pub type GroundTruth2DSet = RecordSet<GroundTruth2D>;

impl<T> Default for RecordSet<T> {
    fn default() -> Self {
        Self {
            frames: IndexMap::new(),
            len: 0,
        }
    }
}

impl<T: Record> PartialEq for RecordSet<T>
where
    T: PartialEq,
{
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
            && self.frames.len() == other.frames.len()
            && self
                .frames
                .iter()
                .zip(&other.frames)
                .all(|((ka, va), (kb, vb))| ka == kb && va == vb)
    }
}

impl<T: Record> FromIterator<T> for RecordSet<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut s = Self::default();
        for r in iter {
            s.push(r);
        }
        s
    }
}

impl<T: Record> RecordSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: T) {
        self.len += 1;
        match self.frames.get_mut(record.frame_id()) {
            Some(v) => v.push(record),
            None => {
                self.frames
                    .insert(record.frame_id().to_owned(), vec![record]);
            }
        }
    }

    /// Registers a frame with no records so it keeps its place in the
    /// iteration order.
    pub fn ensure_frame(&mut self, frame_id: &str) {
        if !self.frames.contains_key(frame_id) {
            self.frames.insert(frame_id.to_owned(), Vec::new());
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    pub fn frames(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.frames.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Records of one frame; empty when the frame is unknown.
    pub fn frame(&self, frame_id: &str) -> &[T] {
        self.frames.get(frame_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.frames.values().flatten()
    }

    /// Keeps records matching `pred`; frames that become empty are kept.
    pub fn filter(&self, mut pred: impl FnMut(&T) -> bool) -> Self {
        let mut frames = IndexMap::with_capacity(self.frames.len());
        let mut len = 0;
        for (k, v) in &self.frames {
            let kept: Vec<T> = v.iter().filter(|r| pred(r)).cloned().collect();
            len += kept.len();
            frames.insert(k.clone(), kept);
        }
        Self { frames, len }
    }

    /// Builds a set from per-frame record lists, in the given frame order.
    pub fn from_frames(frames: impl IntoIterator<Item = (String, Vec<T>)>) -> Self {
        let mut s = Self::default();
        for (k, v) in frames {
            s.len += v.len();
            match s.frames.get_mut(&k) {
                Some(existing) => existing.extend(v),
                None => {
                    s.frames.insert(k, v);
                }
            }
        }
        s
    }

    /// Checks every record's class against the taxonomy.
    pub fn bind(&self, tax: &Taxonomy) -> Result<(), DetectionsError> {
        for r in self.iter() {
            if !T::class_allowed(tax, r.class()) {
                return Err(DetectionsError::UnknownClass {
                    frame_id: r.frame_id().to_owned(),
                    class: r.class().to_owned(),
                    kind: T::KIND,
                });
            }
        }
        Ok(())
    }

    /// Serialized JSONL document, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.iter() {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    /// Parses a JSONL document. Blank lines are skipped; errors carry the
    /// 1-based line number.
    pub fn from_jsonl(text: &str, path: &str) -> Result<Self, DetectionsError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l))
            .collect();
        let parsed = par::map(&lines, |(n, l)| (*n, T::from_json_line(l)));
        let mut set = Self::default();
        for (line, res) in parsed {
            match res {
                Err(source) => {
                    return Err(DetectionsError::Parse {
                        path: path.to_owned(),
                        line,
                        source,
                    })
                }
                Ok(Err(reason)) => {
                    return Err(DetectionsError::Invalid {
                        path: path.to_owned(),
                        line,
                        reason,
                    })
                }
                Ok(Ok(r)) => set.push(r),
            }
        }
        Ok(set)
    }
}

pub fn load_records<T: Record>(path: impl AsRef<Path>) -> Result<RecordSet<T>, DetectionsError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DetectionsError::Io {
        path: display.clone(),
        source,
    })?;
    RecordSet::from_jsonl(&text, &display)
}

pub fn save_records<T: Record>(
    set: &RecordSet<T>,
    path: impl AsRef<Path>,
) -> Result<(), DetectionsError> {
    let path = path.as_ref();
    let io_err = |source| DetectionsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(set.to_jsonl().as_bytes()).map_err(io_err)?;
    f.flush().map_err(io_err)
}

/// Yaw (rotation about +z) of a unit quaternion given as (w, x, y, z).
pub fn quaternion_to_yaw(q: [f64; 4]) -> f64 {
    let [w, x, y, z] = q;
    (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
}

/// Converts a nuScenes results document (`{"results": {sample_token: [box, ...]}}`)
/// into native LiDAR detections. Sizes arrive as (w, l, h) and rotations
/// as (w, x, y, z) quaternions.
pub fn import_nuscenes_results(text: &str, path: &str) -> Result<DetectionSet, DetectionsError> {
    let schema = |reason: String| DetectionsError::Schema {
        path: path.to_owned(),
        reason,
    };
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|source| DetectionsError::Parse {
            path: path.to_owned(),
            line: source.line(),
            source,
        })?;
    let results = doc
        .get("results")
        .and_then(|r| r.as_object())
        .ok_or_else(|| schema("missing object field 'results'".into()))?;

    let mut set = DetectionSet::new();
    for (token, boxes) in results {
        let boxes = boxes
            .as_array()
            .ok_or_else(|| schema(format!("results['{token}'] is not an array")))?;
        set.ensure_frame(token);
        for (i, b) in boxes.iter().enumerate() {
            let field = |name: &str| {
                b.get(name)
                    .ok_or_else(|| schema(format!("results['{token}'][{i}] missing '{name}'")))
            };
            let numbers = |name: &str, n: usize| -> Result<Vec<f64>, DetectionsError> {
                let v = field(name)?
                    .as_array()
                    .filter(|a| a.len() == n)
                    .ok_or_else(|| {
                        schema(format!(
                            "results['{token}'][{i}].{name} must have {n} numbers"
                        ))
                    })?;
                v.iter()
                    .map(|x| {
                        x.as_f64().ok_or_else(|| {
                            schema(format!("results['{token}'][{i}].{name} must be numeric"))
                        })
                    })
                    .collect()
            };
            let t = numbers("translation", 3)?;
            let s = numbers("size", 3)?;
            let q = numbers("rotation", 4)?;
            let class = field("detection_name")?
                .as_str()
                .ok_or_else(|| {
                    schema(format!(
                        "results['{token}'][{i}].detection_name must be a string"
                    ))
                })?
                .to_owned();
            let score = field("detection_score")?.as_f64().ok_or_else(|| {
                schema(format!(
                    "results['{token}'][{i}].detection_score must be numeric"
                ))
            })?;
            check_score(score, None)
                .map_err(|r| schema(format!("results['{token}'][{i}]: {r}")))?;
            let yaw = quaternion_to_yaw([q[0], q[1], q[2], q[3]]);
            let box3d = Box3D::new(Vec3::new(t[0], t[1], t[2]), s[1], s[0], s[2], yaw)
                .map_err(|e| schema(format!("results['{token}'][{i}]: {e}")))?;
            set.push(Detection3D {
                frame_id: token.clone(),
                box3d,
                class,
                score,
                logit: None,
                source: Source::Lidar,
            });
        }
    }
    Ok(set)
}

pub fn load_nuscenes_results(path: impl AsRef<Path>) -> Result<DetectionSet, DetectionsError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DetectionsError::Io {
        path: display.clone(),
        source,
    })?;
    import_nuscenes_results(&text, &display)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn det(frame: &str, class: &str, score: f64) -> Detection3D {
        Detection3D {
            frame_id: frame.into(),
            box3d: Box3D::new(Vec3::new(1.0, 2.0, 0.5), 4.0, 2.0, 1.5, 0.3).unwrap(),
            class: class.into(),
            score,
            logit: None,
            source: Source::Lidar,
        }
    }

    #[test]
    fn frames_keep_first_seen_order() {
        let set: DetectionSet = [
            det("b", "car", 0.1),
            det("a", "car", 0.2),
            det("b", "car", 0.3),
        ]
        .into_iter()
        .collect();
        assert_eq!(set.frame_ids().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(set.frame("b").len(), 2);
        assert_eq!(set.len(), 3);
        assert!(set.frame("zzz").is_empty());
    }

    #[test]
    fn empty_document_is_empty_set() {
        let s = DetectionSet::from_jsonl("", "x").unwrap();
        assert!(s.is_empty());
        assert_eq!(s.to_jsonl(), "");
    }

    #[test]
    fn out_of_range_score_names_line() {
        let good = det("f", "car", 0.5).to_json_line();
        let bad = good.replace("0.5", "1.5");
        let doc = format!("{good}\n{bad}\n");
        match DetectionSet::from_jsonl(&doc, "dets.jsonl") {
            Err(DetectionsError::Invalid { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "dets.jsonl");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
        let err = DetectionSet::from_jsonl("{not json", "d").unwrap_err();
        assert!(matches!(err, DetectionsError::Parse { line: 1, .. }));
    }

    #[test]
    fn wire_field_order_is_stable() {
        let mut d = det("f0", "car", 0.123456789123);
        d.logit = Some(-0.25);
        assert_eq!(
            d.to_json_line(),
            r#"{"frame_id":"f0","class":"car","score":0.123456789,"logit":-0.25,"center":[1.0,2.0,0.5],"size":[4.0,2.0,1.5],"yaw":0.3,"source":"lidar"}"#
        );
        let g = GroundTruth3D {
            frame_id: "f0".into(),
            box3d: d.box3d,
            class: "car".into(),
            visibility: Some(Visibility::V40To60),
        };
        assert_eq!(
            g.to_json_line(),
            r#"{"frame_id":"f0","class":"car","center":[1.0,2.0,0.5],"size":[4.0,2.0,1.5],"yaw":0.3,"visibility":"40-60"}"#
        );
    }

    #[test]
    fn derived_logit_is_clamped_inverse_sigmoid() {
        let d = det("f", "car", 0.5);
        assert_eq!(d.logit_or_derived(), 0.0);
        let one = det("f", "car", 1.0).logit_or_derived();
        assert!((one - ((1.0 - 1e-7) / 1e-7f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn nuscenes_import() {
        let h = (FRAC_PI_2 / 2.0).cos();
        let doc = format!(
            r#"{{"meta": {{}}, "results": {{
                "tok1": [
                  {{"sample_token":"tok1","translation":[1,2,3],"size":[2,5,1.5],"rotation":[1,0,0,0],
                    "detection_name":"car","detection_score":0.9}},
                  {{"sample_token":"tok1","translation":[0,0,0],"size":[1,1,1],"rotation":[{h},0,0,{h}],
                    "detection_name":"adult","detection_score":0.4}}
                ],
                "tok0": []
            }}}}"#
        );
        let set = import_nuscenes_results(&doc, "r.json").unwrap();
        assert_eq!(set.len(), 2);
        let recs: Vec<_> = set.iter().collect();
        assert_eq!(recs[0].box3d.yaw, 0.0);
        assert_eq!((recs[0].box3d.length, recs[0].box3d.width), (5.0, 2.0));
        assert!((recs[1].box3d.yaw - FRAC_PI_2).abs() < 1e-12);

        let empty = import_nuscenes_results(r#"{"results": {}}"#, "r").unwrap();
        assert!(empty.is_empty());

        let missing = r#"{"results": {"t": [{"translation":[0,0,0],"size":[1,1,1],"rotation":[1,0,0,0],"detection_score":0.5}]}}"#;
        let err = import_nuscenes_results(missing, "r").unwrap_err();
        assert!(err.to_string().contains("detection_name"));
    }

    #[test]
    fn bind_checks_taxonomy() {
        let tax = Taxonomy::from_json_str(
            r#"{"root":"object","coarse":[{"name":"vehicle","children":["car"]}],"train_counts":{"car":1}}"#,
            "t",
        )
        .unwrap();
        let ok: DetectionSet = [det("f", "car", 0.5), det("f", "vehicle", 0.5)]
            .into_iter()
            .collect();
        assert!(ok.bind(&tax).is_ok());
        let bad: DetectionSet = [det("f", "boat", 0.5)].into_iter().collect();
        assert!(bad.bind(&tax).is_err());
        let gt: GroundTruthSet = [GroundTruth3D {
            frame_id: "f".into(),
            box3d: det("f", "car", 0.5).box3d,
            class: "vehicle".into(),
            visibility: None,
        }]
        .into_iter()
        .collect();
        assert!(gt.bind(&tax).is_err());
    }

    #[test]
    fn drop_coarse_removes_superclass_detections() {
        let tax = Taxonomy::from_json_str(
            r#"{"root":"object","coarse":[{"name":"pedestrian","children":["adult","child"]}],
                "train_counts":{"adult":10,"child":1}}"#,
            "t",
        )
        .unwrap();
        let set: DetectionSet = [
            det("f", "adult", 0.5),
            det("f", "pedestrian", 0.9),
            det("f", "child", 0.2),
        ]
        .into_iter()
        .collect();
        let out = tax.drop_coarse_detections(&set);
        let classes: Vec<&str> = out.iter().map(|d| d.class.as_str()).collect();
        assert_eq!(classes, vec!["adult", "child"]);
        assert!(tax.drop_coarse_detections(&DetectionSet::new()).is_empty());
    }
}
