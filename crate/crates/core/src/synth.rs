//! Seeded synthetic scenes and detector simulators.
//!
//! A scenario fixes a taxonomy, long-tailed spawn rates and the error
//! characteristics of two detectors: a LiDAR detector with good recall and
//! localization but a class-confusion kernel, and an RGB detector that
//! classifies well and reports image-plane boxes only.
//!
//! Every frame draws from its own ChaCha8 stream seeded with
//! `splitmix64(seed ^ splitmix64(stage ^ splitmix64(frame)))`, so frames can
//! be generated in parallel and in any order with identical results.

use crate::detections::{
    quantize_score, Detection2D, Detection2DSet, Detection3D, DetectionSet, GroundTruth2D,
    GroundTruth2DSet, GroundTruth3D, GroundTruthSet, Source, Visibility,
};
use crate::geometry::{
    normalize_yaw, project_to_rig, Box2D, Box3D, CameraRig, GeometryError, Vec3,
};
use crate::par;
use crate::taxonomy::{Taxonomy, TaxonomyError};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Class-typical box sizes `[l, w, h]` in meters.
pub const DEFAULT_DIMS_JSON: &str = include_str!("../data/class_dims.json");

const STAGE_SCENE: u64 = 1;
const STAGE_LIDAR: u64 = 2;
const STAGE_RGB: u64 = 3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type Result<T> = std::result::Result<T, SynthError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SynthError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Expected instances per frame.
    pub spawn_rate: f64,
    /// `[l, w, h]`; defaults to the shipped dimension table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[f64; 3]>,
}

/// Detection probability for objects closer than `max_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeRecall {
    pub max_m: f64,
    pub recall: f64,
}

/// Normal distribution over the calibrated (latent) logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitModel {
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSim {
    /// Bins in increasing `max_m`; objects beyond the last bin are missed.
    pub recall_by_range: Vec<RangeRecall>,
    pub localization_sigma_m: f64,
    /// `confusion[true][predicted]`; rows not listed are the identity.
    #[serde(default)]
    pub confusion: BTreeMap<String, BTreeMap<String, f64>>,
    /// Reported logit is the latent logit divided by this, so values above 1
    /// make the detector underconfident.
    pub underconfidence_temperature: f64,
    pub logit_correct: LogitModel,
    pub logit_confused: LogitModel,
    pub false_positives_per_frame: f64,
    pub logit_false_positive: LogitModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbSim {
    /// Probability of the correct label; errors pick a uniform sibling.
    pub accuracy: f64,
    pub jitter_px: f64,
    pub default_recall: f64,
    #[serde(default)]
    pub recall: BTreeMap<String, f64>,
    pub false_positives_per_frame: f64,
    #[serde(default = "one")]
    pub underconfidence_temperature: f64,
    pub logit_correct: LogitModel,
    pub logit_confused: LogitModel,
    pub logit_false_positive: LogitModel,
}

fn one() -> f64 {
    1.0
}

/// Camera rig: the name `"surround_view"` or an inline calibration array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RigSpec {
    Named(String),
    Inline(serde_json::Value),
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec::Named("surround_view".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_frames: usize,
    /// Taxonomy document, inline.
    pub taxonomy: serde_json::Value,
    /// Fine classes not listed never spawn.
    pub classes: BTreeMap<String, ClassSpec>,
    /// Objects are placed uniformly in `[-extent_m, extent_m]^2`.
    pub extent_m: f64,
    /// Placements closer than this to the ego origin are redrawn.
    #[serde(default)]
    pub min_distance_m: f64,
    pub lidar: LidarSim,
    pub rgb: RgbSim,
    #[serde(default)]
    pub rig: RigSpec,
}

/// A scenario with its taxonomy, rig and dimension table resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub taxonomy: Taxonomy,
    pub rig: CameraRig,
    dims: BTreeMap<String, [f64; 3]>,
    kernel: BTreeMap<String, Vec<(String, f64)>>,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        invalid(format!("{name} must be finite and >= 0, got {v}"))
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        invalid(format!("{name} must lie in [0, 1], got {v}"))
    }
}

fn check_logit(name: &str, m: &LogitModel) -> Result<()> {
    if !m.mean.is_finite() {
        return invalid(format!("{name}.mean must be finite"));
    }
    check_nonneg(&format!("{name}.sigma"), m.sigma)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        let taxonomy = Taxonomy::from_json_str(&config.taxonomy.to_string(), "scenario.taxonomy")?;
        let rig = match &config.rig {
            RigSpec::Named(n) if n == "surround_view" => CameraRig::surround_view(),
            RigSpec::Named(n) => return invalid(format!("unknown rig '{n}'")),
            RigSpec::Inline(v) => CameraRig::from_json_str(&v.to_string(), "scenario.rig")?,
        };
        let table: BTreeMap<String, [f64; 3]> =
            serde_json::from_str(DEFAULT_DIMS_JSON).expect("shipped dimension table parses");

        check_nonneg("extent_m", config.extent_m)?;
        check_nonneg("min_distance_m", config.min_distance_m)?;
        if config.min_distance_m >= config.extent_m {
            return invalid("min_distance_m must be below extent_m");
        }
        let mut dims = BTreeMap::new();
        for (class, spec) in &config.classes {
            if !taxonomy.is_fine(class) {
                return invalid(format!("'{class}' is not a fine class of the taxonomy"));
            }
            check_nonneg(&format!("classes.{class}.spawn_rate"), spec.spawn_rate)?;
            let d = match spec.dims.or_else(|| table.get(class).copied()) {
                Some(d) => d,
                None => return invalid(format!("no dimensions for '{class}'")),
            };
            if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return invalid(format!("dimensions of '{class}' must be positive"));
            }
            dims.insert(class.clone(), d);
        }

        let l = &config.lidar;
        let mut prev = 0.0;
        for b in &l.recall_by_range {
            if b.max_m.is_nan() || b.max_m <= prev {
                return invalid("lidar.recall_by_range must be strictly increasing in max_m");
            }
            check_prob("lidar.recall_by_range.recall", b.recall)?;
            prev = b.max_m;
        }
        check_nonneg("lidar.localization_sigma_m", l.localization_sigma_m)?;
        if !(l.underconfidence_temperature.is_finite() && l.underconfidence_temperature > 0.0) {
            return invalid("lidar.underconfidence_temperature must be positive");
        }
        check_nonneg(
            "lidar.false_positives_per_frame",
            l.false_positives_per_frame,
        )?;
        check_logit("lidar.logit_correct", &l.logit_correct)?;
        check_logit("lidar.logit_confused", &l.logit_confused)?;
        check_logit("lidar.logit_false_positive", &l.logit_false_positive)?;

        let mut kernel = BTreeMap::new();
        for (truth, row) in &l.confusion {
            if !taxonomy.is_fine(truth) {
                return invalid(format!("confusion row '{truth}' is not a fine class"));
            }
            let mut sum = 0.0;
            let mut entries = Vec::new();
            for (pred, p) in row {
                if !taxonomy.is_fine(pred) {
                    return invalid(format!("confusion column '{pred}' is not a fine class"));
                }
                check_prob(&format!("confusion[{truth}][{pred}]"), *p)?;
                sum += p;
                entries.push((pred.clone(), *p));
            }
            if (sum - 1.0).abs() > 1e-9 {
                return invalid(format!("confusion row '{truth}' sums to {sum}, not 1"));
            }
            kernel.insert(truth.clone(), entries);
        }

        let r = &config.rgb;
        check_prob("rgb.accuracy", r.accuracy)?;
        check_nonneg("rgb.jitter_px", r.jitter_px)?;
        check_prob("rgb.default_recall", r.default_recall)?;
        for (c, p) in &r.recall {
            if !taxonomy.is_fine(c) {
                return invalid(format!("rgb.recall class '{c}' is not a fine class"));
            }
            check_prob(&format!("rgb.recall.{c}"), *p)?;
        }
        check_nonneg("rgb.false_positives_per_frame", r.false_positives_per_frame)?;
        if !(r.underconfidence_temperature.is_finite() && r.underconfidence_temperature > 0.0) {
            return invalid("rgb.underconfidence_temperature must be positive");
        }
        check_logit("rgb.logit_correct", &r.logit_correct)?;
        check_logit("rgb.logit_confused", &r.logit_confused)?;
        check_logit("rgb.logit_false_positive", &r.logit_false_positive)?;

        Ok(Self {
            config,
            taxonomy,
            rig,
            dims,
            kernel,
        })
    }

    pub fn from_json_str(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|source| SynthError::Parse {
                path: path.as_ref().to_owned(),
                source,
            })?;
        Self::from_config(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json_str(&text, path)
    }

    pub fn frame_id(i: usize) -> String {
        format!("frame-{i:06}")
    }

    fn rng(&self, stage: u64, frame: usize) -> ChaCha8Rng {
        let s = splitmix64(self.config.seed ^ splitmix64(stage ^ splitmix64(frame as u64)));
        ChaCha8Rng::seed_from_u64(s)
    }

    /// Spawning classes in taxonomy order, with their rates.
    fn spawn_table(&self) -> Vec<(&str, f64)> {
        self.taxonomy
            .fine_classes()
            .iter()
            .filter_map(|c| {
                self.config
                    .classes
                    .get(c)
                    .map(|s| (c.as_str(), s.spawn_rate))
            })
            .filter(|(_, r)| *r > 0.0)
            .collect()
    }

    fn random_class<'s>(&self, table: &[(&'s str, f64)], rng: &mut ChaCha8Rng) -> &'s str {
        let total: f64 = table.iter().map(|t| t.1).sum();
        let mut u = rng.random::<f64>() * total;
        for (c, r) in table {
            if u < *r {
                return c;
            }
            u -= r;
        }
        table.last().expect("non-empty spawn table").0
    }

    fn random_box(&self, class: &str, rng: &mut ChaCha8Rng) -> Box3D {
        let e = self.config.extent_m;
        let pos = Uniform::new_inclusive(-e, e).expect("extent validated");
        let (x, y) = loop {
            let (x, y): (f64, f64) = (pos.sample(rng), pos.sample(rng));
            if x.hypot(y) >= self.config.min_distance_m {
                break (x, y);
            }
        };
        let [l, w, h] = self.dims[class];
        let mut jitter = || 1.0 + (rng.random::<f64>() - 0.5) * 0.1;
        let (l, w, h) = (l * jitter(), w * jitter(), h * jitter());
        let yaw = normalize_yaw((rng.random::<f64>() * 2.0 - 1.0) * PI);
        Box3D::new(Vec3::new(x, y, h / 2.0), l, w, h, yaw).expect("finite positive box")
    }

    /// Ground truth for every frame.
    pub fn generate_scene(&self) -> GroundTruthSet {
        let spawn = self.spawn_table();
        let frames = par::map_range(self.config.n_frames, |f| {
            let mut rng = self.rng(STAGE_SCENE, f);
            let id = Self::frame_id(f);
            let mut out = Vec::new();
            for (class, rate) in &spawn {
                let n = poisson(*rate, &mut rng);
                for _ in 0..n {
                    let box3d = self.random_box(class, &mut rng);
                    let visibility = Visibility::ALL[rng.random_range(0..Visibility::ALL.len())];
                    out.push(GroundTruth3D {
                        frame_id: id.clone(),
                        box3d,
                        class: (*class).to_owned(),
                        visibility: Some(visibility),
                    });
                }
            }
            (id, out)
        });
        GroundTruthSet::from_frames(frames)
    }

    fn lidar_recall(&self, distance: f64) -> f64 {
        self.config
            .lidar
            .recall_by_range
            .iter()
            .find(|b| distance < b.max_m)
            .map_or(0.0, |b| b.recall)
    }

    fn confused_class<'a>(&'a self, truth: &'a str, rng: &mut ChaCha8Rng) -> &'a str {
        let Some(row) = self.kernel.get(truth) else {
            return truth;
        };
        let mut u: f64 = rng.random();
        for (pred, p) in row {
            if u < *p {
                return pred;
            }
            u -= p;
        }
        row.iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map_or(truth, |(c, _)| c)
    }

    /// LiDAR detections: each ground-truth object is detected with the
    /// range-dependent recall, its center jittered, its class drawn from the
    /// confusion kernel. False positives are scattered uniformly.
    pub fn simulate_lidar_detector(&self, gt: &GroundTruthSet) -> DetectionSet {
        let l = &self.config.lidar;
        let spawn = self.spawn_table();
        let frames: Vec<(&str, &[GroundTruth3D])> = gt.frames().collect();
        let out = par::map_range(frames.len(), |fi| {
            let (id, objects) = frames[fi];
            let mut rng = self.rng(STAGE_LIDAR, frame_index(id, fi));
            let mut dets = Vec::new();
            for g in objects {
                if rng.random::<f64>() >= self.lidar_recall(g.ego_distance()) {
                    continue;
                }
                let mut center = g.box3d.center;
                if l.localization_sigma_m > 0.0 {
                    let n = Normal::new(0.0, l.localization_sigma_m).expect("sigma validated");
                    center += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                }
                let class = self.confused_class(&g.class, &mut rng).to_owned();
                let model = if class == g.class {
                    &l.logit_correct
                } else {
                    &l.logit_confused
                };
                let logit = normal(model, &mut rng) / l.underconfidence_temperature;
                let box3d = Box3D { center, ..g.box3d };
                dets.push(lidar_det(id, box3d, class, logit));
            }
            if !spawn.is_empty() {
                for _ in 0..poisson(l.false_positives_per_frame, &mut rng) {
                    let class = self.random_class(&spawn, &mut rng);
                    let box3d = self.random_box(class, &mut rng);
                    let logit =
                        normal(&l.logit_false_positive, &mut rng) / l.underconfidence_temperature;
                    dets.push(lidar_det(id, box3d, class.to_owned(), logit));
                }
            }
            (id.to_owned(), dets)
        });
        DetectionSet::from_frames(out)
    }

    fn rgb_recall(&self, class: &str) -> f64 {
        self.config
            .rgb
            .recall
            .get(class)
            .copied()
            .unwrap_or(self.config.rgb.default_recall)
    }

    fn rgb_label<'a>(&'a self, truth: &'a str, rng: &mut ChaCha8Rng) -> &'a str {
        if rng.random::<f64>() < self.config.rgb.accuracy {
            return truth;
        }
        let siblings = self
            .taxonomy
            .siblings_within(truth, 1)
            .expect("ground truth classes are fine");
        if siblings.is_empty() {
            truth
        } else {
            siblings[rng.random_range(0..siblings.len())]
        }
    }

    /// RGB 2D detections in the camera where each object's projected hull
    /// is largest. Objects outside every camera are never detected.
    pub fn simulate_rgb_detector(&self, gt: &GroundTruthSet) -> Detection2DSet {
        let r = &self.config.rgb;
        let spawn = self.spawn_table();
        let frames: Vec<(&str, &[GroundTruth3D])> = gt.frames().collect();
        let out = par::map_range(frames.len(), |fi| {
            let (id, objects) = frames[fi];
            let mut rng = self.rng(STAGE_RGB, frame_index(id, fi));
            let mut dets = Vec::new();
            for g in objects {
                let Some((cam, hull)) = best_view(&g.box3d, &self.rig) else {
                    continue;
                };
                if rng.random::<f64>() >= self.rgb_recall(&g.class) {
                    continue;
                }
                let class = self.rgb_label(&g.class, &mut rng).to_owned();
                let model = if class == g.class {
                    &r.logit_correct
                } else {
                    &r.logit_confused
                };
                let logit = normal(model, &mut rng) / r.underconfidence_temperature;
                let intr = &self.rig.camera(cam).expect("camera from rig").intrinsics;
                let Some(box2d) = jitter_box(&hull, r.jitter_px, intr.width, intr.height, &mut rng)
                else {
                    continue;
                };
                dets.push(rgb_det(id, cam, box2d, class, logit));
            }
            if !spawn.is_empty() && !self.rig.cameras.is_empty() {
                for _ in 0..poisson(r.false_positives_per_frame, &mut rng) {
                    let class = self.random_class(&spawn, &mut rng);
                    let cam = &self.rig.cameras[rng.random_range(0..self.rig.cameras.len())];
                    let (w, h) = (cam.intrinsics.width as f64, cam.intrinsics.height as f64);
                    let bw = rng.random_range(20.0..200.0_f64).min(w);
                    let bh = rng.random_range(20.0..200.0_f64).min(h);
                    let x1 = rng.random::<f64>() * (w - bw);
                    let y1 = rng.random::<f64>() * (h - bh);
                    let box2d = Box2D::new(x1, y1, x1 + bw, y1 + bh).expect("inside image");
                    let logit =
                        normal(&r.logit_false_positive, &mut rng) / r.underconfidence_temperature;
                    dets.push(rgb_det(id, &cam.camera_id, box2d, class.to_owned(), logit));
                }
            }
            (id.to_owned(), dets)
        });
        Detection2DSet::from_frames(out)
    }

    /// Image-plane ground truth: each object's hull in its best camera.
    pub fn project_ground_truth(&self, gt: &GroundTruthSet) -> GroundTruth2DSet {
        let mut out = GroundTruth2DSet::new();
        for (id, objects) in gt.frames() {
            out.ensure_frame(id);
            for g in objects {
                if let Some((cam, box2d)) = best_view(&g.box3d, &self.rig) {
                    out.push(GroundTruth2D {
                        frame_id: id.to_owned(),
                        camera_id: cam.to_owned(),
                        box2d,
                        class: g.class.clone(),
                    });
                }
            }
        }
        out
    }

    /// Scene plus both detectors.
    pub fn simulate(&self) -> SyntheticData {
        let gt = self.generate_scene();
        let lidar = self.simulate_lidar_detector(&gt);
        let rgb2d = self.simulate_rgb_detector(&gt);
        let gt2d = self.project_ground_truth(&gt);
        SyntheticData {
            gt,
            gt2d,
            lidar,
            rgb2d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub gt: GroundTruthSet,
    pub gt2d: GroundTruth2DSet,
    pub lidar: DetectionSet,
    pub rgb2d: Detection2DSet,
}

/// Frame number from a `frame-NNNNNN` id, else the position in the set.
fn frame_index(id: &str, position: usize) -> usize {
    id.strip_prefix("frame-")
        .and_then(|n| n.parse().ok())
        .unwrap_or(position)
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn poisson(rate: f64, rng: &mut ChaCha8Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

fn normal(m: &LogitModel, rng: &mut ChaCha8Rng) -> f64 {
    if m.sigma == 0.0 {
        m.mean
    } else {
        m.mean + m.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lidar_det(frame: &str, box3d: Box3D, class: String, logit: f64) -> Detection3D {
    Detection3D {
        frame_id: frame.to_owned(),
        box3d,
        class,
        score: quantize_score(sigmoid(logit)),
        logit: Some(logit),
        source: Source::Lidar,
    }
}

fn rgb_det(frame: &str, camera: &str, box2d: Box2D, class: String, logit: f64) -> Detection2D {
    Detection2D {
        frame_id: frame.to_owned(),
        camera_id: camera.to_owned(),
        box2d,
        class,
        score: quantize_score(sigmoid(logit)),
        logit: Some(logit),
    }
}

fn best_view<'r>(b: &Box3D, rig: &'r CameraRig) -> Option<(&'r str, Box2D)> {
    let mut best: Option<(&str, Box2D)> = None;
    for (cam, hull) in project_to_rig(b, rig) {
        if best.is_none_or(|(_, h)| hull.area() > h.area()) {
            best = Some((cam, hull));
        }
    }
    best
}

fn jitter_box(
    b: &Box2D,
    sigma: f64,
    width: u32,
    height: u32,
    rng: &mut ChaCha8Rng,
) -> Option<Box2D> {
    if sigma == 0.0 {
        return Some(*b);
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    let (w, h) = (width as f64, height as f64);
    let x1 = (b.x1 + n.sample(rng)).clamp(0.0, w);
    let y1 = (b.y1 + n.sample(rng)).clamp(0.0, h);
    let x2 = (b.x2 + n.sample(rng)).clamp(0.0, w);
    let y2 = (b.y2 + n.sample(rng)).clamp(0.0, h);
    Box2D::new(x1, y1, x2, y2).ok()
}
