//! Score calibration, multi-modal filtering (MMF), multi-modal late fusion
//! (MMLF) and within-class NMS.
//!
//! MMLF works frame by frame: LiDAR boxes are projected into every camera,
//! matched to 2D RGB detections on the image plane, and then
//!
//! * unmatched RGB detections are dropped,
//! * unmatched LiDAR detections keep their class with score `w * score`,
//! * matched pairs that agree on the class get
//!   `p_rgb * p_lidar / p(c)` from the two calibrated scores,
//! * matched pairs that disagree take the RGB class and RGB calibrated
//!   score with the LiDAR box.
//!
//! Calibration is per-class temperature scaling, `sigmoid(logit / tau_c)`.
//! The class prior `p(c)` is read from the RGB model's table.

use crate::detections::{Detection2DSet, Detection3D, DetectionSet, GroundTruthSet, Source};
use crate::eval::{self, ApMode, EvalError, EvalOptions};
use crate::geometry::{bev_aabb_iou, project_to_rig, CameraRig};
use crate::matching::{match_cross_modal_2d, match_cross_modal_3d, score_order, ProjectedBox};
use crate::par;
use crate::taxonomy::Taxonomy;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_UNMATCHED_LIDAR_WEIGHT: f64 = 0.4;
pub const DEFAULT_MMF_RADIUS_M: f64 = 4.0;
pub const DEFAULT_NMS_IOU_BEV: f64 = 0.1;

/// Smallest AP gain that counts as an improvement while tuning.
const TUNE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("class prior must be positive and finite, got {0}")]
    BadPrior(f64),
    #[error("probability out of [0, 1]: {0}")]
    BadProbability(f64),
    #[error("invalid fusion config: {0}")]
    BadConfig(String),
    #[error("invalid calibration table: {0}")]
    BadTable(String),
    #[error(
        "frame {frame_id}: RGB detection references camera '{camera_id}' missing from the rig"
    )]
    MissingCamera { frame_id: String, camera_id: String },
    #[error("empty tuning grid")]
    EmptyGrid,
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
    #[error(transparent)]
    Eval(#[from] EvalError),
}

type Result<T> = std::result::Result<T, FusionError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| FusionError::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Projected-LiDAR vs RGB IoU must exceed this to match.
    pub iou_threshold: f64,
    /// Multiplier `w` for LiDAR detections without an RGB match.
    pub unmatched_lidar_weight: f64,
    pub mmf_radius_m: f64,
    /// Only same-class RGB detections corroborate a LiDAR detection in MMF.
    pub mmf_class_aware: bool,
    pub nms_iou_bev: f64,
    /// Clip fused scores to [0, 1].
    pub score_clip: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            unmatched_lidar_weight: DEFAULT_UNMATCHED_LIDAR_WEIGHT,
            mmf_radius_m: DEFAULT_MMF_RADIUS_M,
            mmf_class_aware: true,
            nms_iou_bev: DEFAULT_NMS_IOU_BEV,
            score_clip: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ratio = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(FusionError::BadConfig(format!(
                    "{name} must be in (0, 1], got {v}"
                )))
            }
        };
        ratio("iou_threshold", self.iou_threshold)?;
        ratio("unmatched_lidar_weight", self.unmatched_lidar_weight)?;
        ratio("nms_iou_bev", self.nms_iou_bev)?;
        if !(self.mmf_radius_m.is_finite() && self.mmf_radius_m > 0.0) {
            return Err(FusionError::BadConfig(format!(
                "mmf_radius_m must be positive, got {}",
                self.mmf_radius_m
            )));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| FusionError::Parse {
            path: path.as_ref().to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&read_text(path)?, path)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Per-class temperatures and priors of one model. Missing entries mean
/// the neutral value 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    pub model_id: String,
    #[serde(default)]
    pub temperature: BTreeMap<String, f64>,
    #[serde(default)]
    pub prior: BTreeMap<String, f64>,
}

impl CalibrationTable {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: BTreeMap::new(),
            prior: BTreeMap::new(),
        }
    }

    /// Explicit τ = 1 and p = 1 for every fine class.
    pub fn neutral(model_id: impl Into<String>, taxonomy: &Taxonomy) -> Self {
        let ones: BTreeMap<String, f64> = taxonomy
            .fine_classes()
            .iter()
            .map(|c| (c.clone(), 1.0))
            .collect();
        Self {
            model_id: model_id.into(),
            temperature: ones.clone(),
            prior: ones,
        }
    }

    pub fn temperature(&self, class: &str) -> f64 {
        self.temperature.get(class).copied().unwrap_or(1.0)
    }

    pub fn prior(&self, class: &str) -> f64 {
        self.prior.get(class).copied().unwrap_or(1.0)
    }

    pub fn set_temperature(&mut self, class: &str, tau: f64) -> Result<()> {
        check_temperature(tau)?;
        self.temperature.insert(class.to_owned(), tau);
        Ok(())
    }

    pub fn set_prior(&mut self, class: &str, prior: f64) -> Result<()> {
        check_prior(prior)?;
        self.prior.insert(class.to_owned(), prior);
        Ok(())
    }

    /// Calibrated probability of `logit` for `class`.
    pub fn calibrate(&self, class: &str, logit: f64) -> f64 {
        sigmoid(logit / self.temperature(class))
    }

    pub fn validate(&self) -> Result<()> {
        for (c, t) in &self.temperature {
            check_temperature(*t)
                .map_err(|_| FusionError::BadTable(format!("temperature[{c}] = {t}")))?;
        }
        for (c, p) in &self.prior {
            check_prior(*p).map_err(|_| FusionError::BadTable(format!("prior[{c}] = {p}")))?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let table: Self = serde_json::from_str(text).map_err(|source| FusionError::Parse {
            path: path.as_ref().to_owned(),
            source,
        })?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&read_text(path)?, path)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(FusionError::BadTemperature(tau))
    }
}

fn check_prior(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(FusionError::BadPrior(p))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sigmoid(logit / tau)`.
pub fn calibrate_score(logit: f64, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    Ok(sigmoid(logit / tau))
}

/// `p_rgb * p_lidar / prior`, clipped to [0, 1] when `clip` is set.
pub fn probabilistic_fuse(p_rgb: f64, p_lidar: f64, prior: f64, clip: bool) -> Result<f64> {
    for p in [p_rgb, p_lidar] {
        if !(0.0..=1.0).contains(&p) {
            return Err(FusionError::BadProbability(p));
        }
    }
    check_prior(prior)?;
    let s = p_rgb * p_lidar / prior;
    Ok(if clip { s.clamp(0.0, 1.0) } else { s })
}

/// Recalibrates every detection with its class temperature. The stored
/// logit becomes `logit / tau`, consistent with the new score.
pub fn apply_temperatures(dets: &DetectionSet, table: &CalibrationTable) -> DetectionSet {
    let frames = dets.frames().map(|(id, fd)| {
        let out = fd
            .iter()
            .map(|d| {
                let logit = d.logit_or_derived() / table.temperature(&d.class);
                Detection3D {
                    score: sigmoid(logit),
                    logit: Some(logit),
                    ..d.clone()
                }
            })
            .collect();
        (id.to_owned(), out)
    });
    DetectionSet::from_frames(frames)
}

/// Multi-modal filtering: keeps exactly the LiDAR detections within
/// `cfg.mmf_radius_m` of an RGB 3D detection (of the same class unless
/// `cfg.mmf_class_aware` is off). Kept detections are unchanged.
pub fn mmf_filter(lidar: &DetectionSet, rgb3d: &DetectionSet, cfg: &FusionConfig) -> DetectionSet {
    let frames: Vec<(&str, &[Detection3D])> = lidar.frames().collect();
    let kept = par::map(&frames, |(id, fd)| {
        let m = match_cross_modal_3d(fd, rgb3d.frame(id), cfg.mmf_radius_m, cfg.mmf_class_aware);
        let out: Vec<Detection3D> = m.pairs.iter().map(|(l, _)| fd[*l].clone()).collect();
        (id.to_string(), out)
    });
    DetectionSet::from_frames(kept)
}

/// Within-class non-maximum suppression on BEV axis-aligned footprints.
/// Survivors keep their input order.
pub fn nms_within_class(dets: &DetectionSet, iou_bev: f64) -> DetectionSet {
    let frames: Vec<(&str, &[Detection3D])> = dets.frames().collect();
    let kept = par::map(&frames, |(id, fd)| {
        let scores: Vec<f64> = fd.iter().map(|d| d.score).collect();
        let mut keep = vec![false; fd.len()];
        let mut kept_idx: Vec<usize> = Vec::new();
        for i in score_order(&scores) {
            let suppressed = kept_idx.iter().any(|&k| {
                fd[k].class == fd[i].class && bev_aabb_iou(&fd[k].box3d, &fd[i].box3d) > iou_bev
            });
            if !suppressed {
                keep[i] = true;
                kept_idx.push(i);
            }
        }
        let out: Vec<Detection3D> = fd
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(d, _)| d.clone())
            .collect();
        (id.to_string(), out)
    });
    DetectionSet::from_frames(kept)
}

#[derive(Debug, Clone, PartialEq)]
enum Pairing {
    Unmatched,
    Matched { rgb_class: String, rgb_logit: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct PlanEntry {
    lidar: Detection3D,
    pairing: Pairing,
}

/// The calibration-independent part of MMLF: which LiDAR detections were
/// matched to which RGB detections. Applying a pair of calibration tables
/// to a plan yields the fused set, so tuning can reuse one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    frames: Vec<(String, Vec<PlanEntry>)>,
}

impl FusionPlan {
    /// Projects and matches every frame of `lidar` against `rgb2d`.
    pub fn build(
        lidar: &DetectionSet,
        rgb2d: &Detection2DSet,
        rig: &CameraRig,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        for d in rgb2d.iter() {
            if rig.camera(&d.camera_id).is_none() {
                return Err(FusionError::MissingCamera {
                    frame_id: d.frame_id.clone(),
                    camera_id: d.camera_id.clone(),
                });
            }
        }
        let frames: Vec<(&str, &[Detection3D])> = lidar.frames().collect();
        let planned = par::map(&frames, |(id, fd)| {
            let rgb = rgb2d.frame(id);
            let projections: Vec<ProjectedBox> = fd
                .iter()
                .enumerate()
                .flat_map(|(i, d)| {
                    project_to_rig(&d.box3d, rig)
                        .into_iter()
                        .map(move |(cam, bbox)| ProjectedBox {
                            detection: i,
                            camera_id: cam.to_owned(),
                            bbox,
                        })
                })
                .collect();
            let m = match_cross_modal_2d(fd.len(), &projections, rgb, cfg.iou_threshold);
            let entries = fd
                .iter()
                .enumerate()
                .map(|(i, d)| PlanEntry {
                    lidar: d.clone(),
                    pairing: match m.target_of(i) {
                        Some(r) => Pairing::Matched {
                            rgb_class: rgb[r].class.clone(),
                            rgb_logit: rgb[r].logit_or_derived(),
                        },
                        None => Pairing::Unmatched,
                    },
                })
                .collect();
            (id.to_string(), entries)
        });
        Ok(Self { frames: planned })
    }

    pub fn num_matched(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|(_, e)| e)
            .filter(|e| matches!(e.pairing, Pairing::Matched { .. }))
            .count()
    }

    /// Fused detections under the given calibration tables; the prior comes
    /// from `rgb`. Each frame is sorted by descending score, then class.
    pub fn apply(
        &self,
        lidar: &CalibrationTable,
        rgb: &CalibrationTable,
        cfg: &FusionConfig,
    ) -> DetectionSet {
        let fused = par::map(&self.frames, |(id, entries)| {
            let mut out: Vec<Detection3D> = entries
                .iter()
                .map(|e| {
                    let (class, score) = match &e.pairing {
                        Pairing::Unmatched => (
                            e.lidar.class.clone(),
                            cfg.unmatched_lidar_weight * e.lidar.score,
                        ),
                        Pairing::Matched {
                            rgb_class,
                            rgb_logit,
                        } => {
                            let p_rgb = rgb.calibrate(rgb_class, *rgb_logit);
                            if *rgb_class == e.lidar.class {
                                let p_lidar =
                                    lidar.calibrate(&e.lidar.class, e.lidar.logit_or_derived());
                                let s = p_rgb * p_lidar / rgb.prior(rgb_class);
                                (
                                    rgb_class.clone(),
                                    if cfg.score_clip { s.clamp(0.0, 1.0) } else { s },
                                )
                            } else {
                                (rgb_class.clone(), p_rgb)
                            }
                        }
                    };
                    Detection3D {
                        frame_id: e.lidar.frame_id.clone(),
                        box3d: e.lidar.box3d,
                        class,
                        score,
                        logit: None,
                        source: Source::Fused,
                    }
                })
                .collect();
            out.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.class.cmp(&b.class))
            });
            (id.clone(), out)
        });
        DetectionSet::from_frames(fused)
    }
}

/// The full MMLF pipeline.
pub fn mmlf_fuse(
    lidar: &DetectionSet,
    rgb2d: &Detection2DSet,
    rig: &CameraRig,
    lidar_table: &CalibrationTable,
    rgb_table: &CalibrationTable,
    cfg: &FusionConfig,
) -> Result<DetectionSet> {
    Ok(FusionPlan::build(lidar, rgb2d, rig, cfg)?.apply(lidar_table, rgb_table, cfg))
}

/// `n` log-spaced values from `lo` to `hi` inclusive. Values within 1e-12
/// of 1 are snapped to exactly 1 so the neutral value is representable.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            let v = (a + (b - a) * i as f64 / (n - 1) as f64).exp();
            if (v - 1.0).abs() < 1e-12 {
                1.0
            } else {
                v
            }
        })
        .collect()
}

/// 15 log-spaced temperatures in [0.25, 4].
pub fn default_temperature_grid() -> Vec<f64> {
    log_grid(0.25, 4.0, 15)
}

/// 11 log-spaced priors in [0.2, 5].
pub fn default_prior_grid() -> Vec<f64> {
    log_grid(0.2, 5.0, 11)
}

fn check_grid(grid: &[f64], check: fn(f64) -> Result<()>) -> Result<()> {
    if grid.is_empty() {
        return Err(FusionError::EmptyGrid);
    }
    grid.iter().try_for_each(|v| check(*v))
}

/// Greedy coordinate search shared by every tuner.
///
/// Classes are visited by descending training count. Each class takes the
/// grid value that maximizes its own threshold-averaged AP given the values
/// already fixed; ties prefer the neutral value 1, then the smallest value.
/// A choice that lowers overall mAP is reverted to 1, so the result never
/// scores below the all-neutral starting point.
fn greedy_tune<F>(
    taxonomy: &Taxonomy,
    gts: &GroundTruthSet,
    grid: &[f64],
    opts: &EvalOptions,
    what: &str,
    produce: F,
) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&BTreeMap<String, f64>) -> DetectionSet + Sync,
{
    let mut values: BTreeMap<String, f64> = taxonomy
        .fine_classes()
        .iter()
        .map(|c| (c.clone(), 1.0))
        .collect();
    let overall = |dets: &DetectionSet| -> Result<f64> {
        Ok(eval::map(dets, gts, taxonomy, opts)?.map(0).unwrap_or(0.0))
    };
    let mut current_map = overall(&produce(&values))?;
    let mut candidates: Vec<f64> = grid.to_vec();
    if !candidates.contains(&1.0) {
        candidates.push(1.0);
    }

    for class in taxonomy.classes_by_cardinality() {
        if !gts.iter().any(|g| g.class == class) {
            log::warn!("no validation ground truth for '{class}'; {what} left at 1");
            continue;
        }
        let scored = par::map(&candidates, |v| {
            let mut trial = values.clone();
            trial.insert(class.to_owned(), *v);
            let ap =
                eval::class_mean_ap(&produce(&trial), gts, class, &opts.thresholds, opts.ap_mode)
                    .unwrap_or(0.0);
            (*v, ap)
        });
        let best_ap = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let neutral_ap = scored
            .iter()
            .find(|s| s.0 == 1.0)
            .map(|s| s.1)
            .unwrap_or(0.0);
        let chosen = if neutral_ap >= best_ap - TUNE_EPS {
            1.0
        } else {
            scored
                .iter()
                .filter(|s| s.1 >= best_ap - TUNE_EPS)
                .map(|s| s.0)
                .fold(f64::INFINITY, f64::min)
        };
        if chosen == 1.0 {
            continue;
        }
        let mut trial = values.clone();
        trial.insert(class.to_owned(), chosen);
        let trial_map = overall(&produce(&trial))?;
        if trial_map + TUNE_EPS >= current_map {
            log::debug!("{what}[{class}] = {chosen} (class AP {neutral_ap:.4} -> {best_ap:.4})");
            values = trial;
            current_map = trial_map;
        } else {
            log::debug!(
                "{what}[{class}] = {chosen} rejected: mAP {current_map:.4} -> {trial_map:.4}"
            );
        }
    }
    Ok(values)
}

fn tuning_opts() -> EvalOptions {
    EvalOptions {
        ap_mode: ApMode::AllPoint,
        ..EvalOptions::default()
    }
}

/// Greedy per-class temperatures for a single model, scored on that
/// model's own detections.
pub fn tune_temperatures_greedy(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    grid: &[f64],
    model_id: &str,
) -> Result<CalibrationTable> {
    check_grid(grid, check_temperature)?;
    let temperature = greedy_tune(taxonomy, gts, grid, &tuning_opts(), "temperature", |t| {
        let mut table = CalibrationTable::new(model_id);
        table.temperature = t.clone();
        apply_temperatures(dets, &table)
    })?;
    let mut table = CalibrationTable::neutral(model_id, taxonomy);
    table.temperature = temperature;
    Ok(table)
}

/// Which model's table a fused tuner adjusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusedModel {
    Lidar,
    Rgb,
}

/// Tunes calibration against fused validation AP, reusing one matching plan.
pub struct FusionTuner<'a> {
    plan: FusionPlan,
    gts: &'a GroundTruthSet,
    taxonomy: &'a Taxonomy,
    cfg: FusionConfig,
    opts: EvalOptions,
}

impl<'a> FusionTuner<'a> {
    pub fn new(
        lidar: &DetectionSet,
        rgb2d: &Detection2DSet,
        rig: &CameraRig,
        gts: &'a GroundTruthSet,
        taxonomy: &'a Taxonomy,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        Ok(Self {
            plan: FusionPlan::build(lidar, rgb2d, rig, cfg)?,
            gts,
            taxonomy,
            cfg: cfg.clone(),
            opts: tuning_opts(),
        })
    }

    pub fn plan(&self) -> &FusionPlan {
        &self.plan
    }

    /// Fused validation mAP (LCA 0) under the given tables.
    pub fn fused_map(&self, lidar: &CalibrationTable, rgb: &CalibrationTable) -> Result<f64> {
        let fused = self.plan.apply(lidar, rgb, &self.cfg);
        Ok(eval::map(&fused, self.gts, self.taxonomy, &self.opts)?
            .map(0)
            .unwrap_or(0.0))
    }

    /// Retunes the temperatures of `model`, holding the other table fixed.
    /// Returns the updated table for `model`.
    pub fn tune_temperatures(
        &self,
        model: FusedModel,
        lidar: &CalibrationTable,
        rgb: &CalibrationTable,
        grid: &[f64],
    ) -> Result<CalibrationTable> {
        check_grid(grid, check_temperature)?;
        let temperature = greedy_tune(
            self.taxonomy,
            self.gts,
            grid,
            &self.opts,
            "temperature",
            |t| match model {
                FusedModel::Lidar => {
                    let table = CalibrationTable {
                        temperature: t.clone(),
                        ..lidar.clone()
                    };
                    self.plan.apply(&table, rgb, &self.cfg)
                }
                FusedModel::Rgb => {
                    let table = CalibrationTable {
                        temperature: t.clone(),
                        ..rgb.clone()
                    };
                    self.plan.apply(lidar, &table, &self.cfg)
                }
            },
        )?;
        let base = match model {
            FusedModel::Lidar => lidar,
            FusedModel::Rgb => rgb,
        };
        Ok(CalibrationTable {
            temperature,
            ..base.clone()
        })
    }

    /// Greedy class priors, stored in the returned copy of `rgb`. With no
    /// matched pairs the prior never enters a score and all stay 1.
    pub fn tune_priors(
        &self,
        lidar: &CalibrationTable,
        rgb: &CalibrationTable,
        grid: &[f64],
    ) -> Result<CalibrationTable> {
        check_grid(grid, check_prior)?;
        let prior = if self.plan.num_matched() == 0 {
            self.taxonomy
                .fine_classes()
                .iter()
                .map(|c| (c.clone(), 1.0))
                .collect()
        } else {
            greedy_tune(self.taxonomy, self.gts, grid, &self.opts, "prior", |p| {
                let table = CalibrationTable {
                    prior: p.clone(),
                    ..rgb.clone()
                };
                self.plan.apply(lidar, &table, &self.cfg)
            })?
        };
        Ok(CalibrationTable {
            prior,
            ..rgb.clone()
        })
    }
}

/// Greedy class priors for MMLF against fused validation AP. The returned
/// table is `rgb_table` with its priors replaced.
#[allow(clippy::too_many_arguments)]
pub fn tune_priors_greedy(
    lidar: &DetectionSet,
    rgb2d: &Detection2DSet,
    rig: &CameraRig,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    lidar_table: &CalibrationTable,
    rgb_table: &CalibrationTable,
    cfg: &FusionConfig,
    grid: &[f64],
) -> Result<CalibrationTable> {
    FusionTuner::new(lidar, rgb2d, rig, gts, taxonomy, cfg)?.tune_priors(
        lidar_table,
        rgb_table,
        grid,
    )
}
