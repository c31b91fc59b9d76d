//! Long-tailed detection metrics: center-distance AP/mAP, hierarchical
//! mAP with LCA-based ignore semantics, confusion matrices, recall, and
//! range-stratified evaluation.
//!
//! # Hierarchical AP
//!
//! For class `C` at LCA level `k`, detections of `C` are ranked by
//! descending score (ties: frame order, then position in the frame). In
//! each frame a detection first takes the nearest unmatched class-`C`
//! ground truth within the threshold (true positive). Failing that it takes
//! the nearest unmatched ground truth of a class within LCA distance `k` of
//! `C` and is *ignored*: it leaves the precision/recall computation
//! entirely. Everything else is a false positive. The recall denominator
//! only counts class-`C` ground truth, so at `k = 0` this is plain AP.

use crate::detections::{
    Detection2D, Detection2DSet, Detection3D, DetectionSet, GroundTruth2D, GroundTruth2DSet,
    GroundTruth3D, GroundTruthSet, Record, RecordSet, Visibility,
};
use crate::geometry::{bev_center_distance, iou_2d};
use crate::matching::greedy_match_with;
use crate::par;
use crate::taxonomy::{CardinalityGroup, Taxonomy, TaxonomyError};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Center-distance thresholds, meters.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// IoU threshold for image-plane evaluation.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 1] = [0.5];
/// Operating points below this recall or precision are dropped in
/// [`ApMode::NuScenesClipped`].
pub const CLIP_MIN_RECALL: f64 = 0.1;
pub const CLIP_MIN_PRECISION: f64 = 0.1;
/// Center distance used by [`confusion_matrix`].
pub const CONFUSION_DISTANCE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("thresholds must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("at least one threshold is required")]
    NoThresholds,
    #[error("invalid range [{0}, {1})")]
    BadRange(f64, f64),
}

/// How the area under the PR curve is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Area under the interpolated precision envelope over all recall.
    #[default]
    AllPoint,
    /// Envelope above recall 0.1 and precision 0.1 only, rescaled so a
    /// perfect detector scores 1.
    NuScenesClipped,
}

/// Treatment of classes with no ground truth in the split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroGtPolicy {
    /// Report AP as absent and leave the class out of every mean.
    #[default]
    Exclude,
    /// Score the class as 0.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    CenterDistance,
    Iou2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    pub lca_levels: Vec<u8>,
    pub ap_mode: ApMode,
    pub zero_gt: ZeroGtPolicy,
    /// Keep PR curves in the per-threshold results.
    #[serde(skip)]
    pub keep_curves: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            lca_levels: vec![0],
            ap_mode: ApMode::AllPoint,
            zero_gt: ZeroGtPolicy::Exclude,
            keep_curves: false,
        }
    }
}

impl EvalOptions {
    pub fn hierarchical() -> Self {
        Self {
            lca_levels: vec![0, 1, 2],
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.thresholds.is_empty() {
            return Err(EvalError::NoThresholds);
        }
        for t in &self.thresholds {
            if !(t.is_finite() && *t > 0.0) {
                return Err(EvalError::BadThreshold(*t));
            }
        }
        for l in &self.lca_levels {
            if *l > 2 {
                return Err(TaxonomyError::BadLevel(*l).into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

/// Operating points in rank order; one per non-ignored detection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class: String,
    pub lca_level: u8,
    pub threshold: f64,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub ignored: usize,
    pub n_gt: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PrCurve>,
}

/// Builds the PR curve and its area from outcomes already in rank order.
pub fn integrate_pr(
    ranked: &[(f64, Outcome)],
    n_gt: usize,
    mode: ApMode,
) -> (Option<f64>, PrCurve) {
    let mut points = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (score, outcome) in ranked {
        match outcome {
            Outcome::Ignored => continue,
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
        }
        if n_gt > 0 {
            points.push(PrPoint {
                recall: tp as f64 / n_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
                score: *score,
            });
        }
    }
    let curve = PrCurve { points };
    if n_gt == 0 {
        return (None, curve);
    }

    // precision envelope, right to left
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(&envelope) {
        if p.recall > prev_recall {
            area += match mode {
                ApMode::AllPoint => (p.recall - prev_recall) * env,
                ApMode::NuScenesClipped => {
                    let lo = prev_recall.max(CLIP_MIN_RECALL);
                    if p.recall > lo {
                        (p.recall - lo) * (env - CLIP_MIN_PRECISION).max(0.0)
                    } else {
                        0.0
                    }
                }
            };
            prev_recall = p.recall;
        }
    }
    if mode == ApMode::NuScenesClipped {
        area /= (1.0 - CLIP_MIN_RECALL) * (1.0 - CLIP_MIN_PRECISION);
    }
    (Some(area.clamp(0.0, 1.0)), curve)
}

/// Labels detections of one class over all frames and returns them in rank
/// order together with the class's ground-truth count.
fn rank_and_label<D, G, C>(
    dets: &RecordSet<D>,
    gts: &RecordSet<G>,
    class: &str,
    pool: &[&str],
    score_of: impl Fn(&D) -> f64,
    cost: C,
) -> (Vec<(f64, Outcome)>, usize)
where
    D: Record,
    G: Record,
    C: Fn(&D, &G) -> Option<f64>,
{
    // (score, frame rank, position, outcome)
    let mut labelled: Vec<(f64, usize, usize, Outcome)> = Vec::new();
    for (fi, (frame_id, frame_dets)) in dets.frames().enumerate() {
        let members: Vec<usize> = (0..frame_dets.len())
            .filter(|i| frame_dets[*i].class() == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let frame_gts = gts.frame(frame_id);
        let scores: Vec<f64> = members.iter().map(|i| score_of(&frame_dets[*i])).collect();
        let mut used = vec![false; frame_gts.len()];
        for k in crate::matching::score_order(&scores) {
            let d = &frame_dets[members[k]];
            let mut nearest = |accept: &dyn Fn(&str) -> bool| {
                let mut best: Option<(f64, usize)> = None;
                for (gi, g) in frame_gts.iter().enumerate() {
                    if used[gi] || !accept(g.class()) {
                        continue;
                    }
                    if let Some(c) = cost(d, g) {
                        if best.is_none_or(|(bc, _)| c < bc) {
                            best = Some((c, gi));
                        }
                    }
                }
                best.map(|(_, gi)| {
                    used[gi] = true;
                })
            };
            let outcome = if nearest(&|c| c == class).is_some() {
                Outcome::TruePositive
            } else if !pool.is_empty() && nearest(&|c| pool.contains(&c)).is_some() {
                Outcome::Ignored
            } else {
                Outcome::FalsePositive
            };
            labelled.push((scores[k], fi, members[k], outcome));
        }
    }
    labelled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let n_gt = gts.iter().filter(|g| g.class() == class).count();
    (
        labelled.into_iter().map(|(s, _, _, o)| (s, o)).collect(),
        n_gt,
    )
}

fn ap_result(
    class: &str,
    lca_level: u8,
    threshold: f64,
    ranked: &[(f64, Outcome)],
    n_gt: usize,
    mode: ApMode,
    keep_curve: bool,
) -> ApResult {
    let (ap, curve) = integrate_pr(ranked, n_gt, mode);
    let count = |o: Outcome| ranked.iter().filter(|r| r.1 == o).count();
    ApResult {
        class: class.to_owned(),
        lca_level,
        threshold,
        ap,
        tp: count(Outcome::TruePositive),
        fp: count(Outcome::FalsePositive),
        ignored: count(Outcome::Ignored),
        n_gt,
        curve: keep_curve.then_some(curve),
    }
}

fn center_cost(threshold: f64) -> impl Fn(&Detection3D, &GroundTruth3D) -> Option<f64> {
    move |d, g| {
        let dist = bev_center_distance(&d.box3d, &g.box3d);
        (dist <= threshold).then_some(dist)
    }
}

fn iou_cost(threshold: f64) -> impl Fn(&Detection2D, &GroundTruth2D) -> Option<f64> {
    move |d, g| {
        if d.camera_id != g.camera_id {
            return None;
        }
        let iou = iou_2d(&d.box2d, &g.box2d);
        (iou >= threshold).then_some(-iou)
    }
}

/// AP of one fine class at one center-distance threshold and LCA level.
pub fn average_precision(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    class: &str,
    threshold: f64,
    lca_level: u8,
    mode: ApMode,
) -> Result<ApResult, EvalError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let pool = taxonomy.siblings_within(class, lca_level)?;
    let (ranked, n_gt) =
        rank_and_label(dets, gts, class, &pool, |d| d.score, center_cost(threshold));
    Ok(ap_result(
        class, lca_level, threshold, &ranked, n_gt, mode, true,
    ))
}

/// AP of one fine class on the image plane (IoU >= threshold, same camera).
pub fn average_precision_2d(
    dets: &Detection2DSet,
    gts: &GroundTruth2DSet,
    taxonomy: &Taxonomy,
    class: &str,
    iou_threshold: f64,
    lca_level: u8,
    mode: ApMode,
) -> Result<ApResult, EvalError> {
    if !(iou_threshold.is_finite() && iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::BadThreshold(iou_threshold));
    }
    let pool = taxonomy.siblings_within(class, lca_level)?;
    let (ranked, n_gt) = rank_and_label(
        dets,
        gts,
        class,
        &pool,
        |d| d.score,
        iou_cost(iou_threshold),
    );
    Ok(ap_result(
        class,
        lca_level,
        iou_threshold,
        &ranked,
        n_gt,
        mode,
        true,
    ))
}

/// Threshold-averaged AP of one class at LCA 0, the objective used when
/// tuning calibration. `None` when the class has no ground truth.
pub fn class_mean_ap(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    class: &str,
    thresholds: &[f64],
    mode: ApMode,
) -> Option<f64> {
    let mut sum = 0.0;
    for t in thresholds {
        let (ranked, n_gt) = rank_and_label(dets, gts, class, &[], |d| d.score, center_cost(*t));
        sum += integrate_pr(&ranked, n_gt, mode).0?;
    }
    Some(sum / thresholds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLevel {
    pub lca: u8,
    /// Mean over thresholds.
    pub ap: Option<f64>,
    pub per_threshold: Vec<ApResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub group: CardinalityGroup,
    pub n_gt: usize,
    pub levels: Vec<ClassLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub lca: u8,
    pub map: Option<f64>,
    pub groups: BTreeMap<CardinalityGroup, Option<f64>>,
}

/// Half-open ego-distance interval `[min_m, max_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRange {
    pub min_m: f64,
    pub max_m: f64,
}

impl DistanceRange {
    pub const PRESETS: [DistanceRange; 3] = [
        DistanceRange {
            min_m: 0.0,
            max_m: 10.0,
        },
        DistanceRange {
            min_m: 10.0,
            max_m: 20.0,
        },
        DistanceRange {
            min_m: 20.0,
            max_m: 30.0,
        },
    ];

    pub fn new(min_m: f64, max_m: f64) -> Result<Self, EvalError> {
        if min_m.is_nan() || max_m.is_nan() || min_m < 0.0 || max_m <= min_m {
            return Err(EvalError::BadRange(min_m, max_m));
        }
        Ok(Self { min_m, max_m })
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min_m && d < self.max_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub criterion: MatchCriterion,
    pub thresholds: Vec<f64>,
    pub lca_levels: Vec<u8>,
    pub ap_mode: ApMode,
    pub zero_gt: ZeroGtPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<DistanceRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub summary: Vec<LevelSummary>,
    pub classes: Vec<ClassReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn level(&self, lca: u8) -> Option<&LevelSummary> {
        self.summary.iter().find(|s| s.lca == lca)
    }

    /// mAP over classes at an LCA level.
    pub fn map(&self, lca: u8) -> Option<f64> {
        self.level(lca).and_then(|s| s.map)
    }

    pub fn group_map(&self, lca: u8, group: CardinalityGroup) -> Option<f64> {
        self.level(lca)
            .and_then(|s| s.groups.get(&group).copied().flatten())
    }

    pub fn class(&self, class: &str) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn class_ap(&self, class: &str, lca: u8) -> Option<f64> {
        self.class(class)?
            .levels
            .iter()
            .find(|l| l.lca == lca)
            .and_then(|l| l.ap)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat table: `class,group,lca,threshold,ap`. Threshold-averaged rows
    /// use `mean` in the threshold column; absent APs are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,group,lca,threshold,ap\n");
        let fmt_ap = |ap: Option<f64>| ap.map(|a| format!("{a:.9}")).unwrap_or_default();
        for c in &self.classes {
            for l in &c.levels {
                for r in &l.per_threshold {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        c.class,
                        c.group,
                        l.lca,
                        r.threshold,
                        fmt_ap(r.ap)
                    );
                }
                let _ = writeln!(
                    out,
                    "{},{},{},mean,{}",
                    c.class,
                    c.group,
                    l.lca,
                    fmt_ap(l.ap)
                );
            }
        }
        out
    }

    /// PR curves of one class as CSV (`lca,threshold,rank,recall,precision,score`).
    /// Empty unless the report was built with `keep_curves`.
    pub fn pr_curves_csv(&self, class: &str) -> Option<String> {
        let c = self.class(class)?;
        let mut out = String::from("lca,threshold,rank,recall,precision,score\n");
        for l in &c.levels {
            for r in &l.per_threshold {
                if let Some(curve) = &r.curve {
                    for (i, p) in curve.points.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "{},{},{},{:.9},{:.9},{:.9}",
                            l.lca, r.threshold, i, p.recall, p.precision, p.score
                        );
                    }
                }
            }
        }
        Some(out)
    }
}

fn assemble_report(
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
    criterion: MatchCriterion,
    results: Vec<ApResult>,
    range: Option<DistanceRange>,
) -> EvalReport {
    let n_t = opts.thresholds.len();
    let n_l = opts.lca_levels.len();
    let mut results = results.into_iter();
    let mut classes = Vec::new();
    for class in taxonomy.fine_classes() {
        let group = taxonomy.group_of(class).expect("fine class");
        let mut levels = Vec::with_capacity(n_l);
        let mut n_gt = 0;
        for &lca in &opts.lca_levels {
            let mut per_threshold: Vec<ApResult> = results.by_ref().take(n_t).collect();
            n_gt = per_threshold[0].n_gt;
            if opts.zero_gt == ZeroGtPolicy::Zero {
                for r in &mut per_threshold {
                    r.ap.get_or_insert(0.0);
                }
            }
            let ap = if per_threshold.iter().all(|r| r.ap.is_some()) {
                mean(per_threshold.iter().filter_map(|r| r.ap))
            } else {
                None
            };
            levels.push(ClassLevel {
                lca,
                ap,
                per_threshold,
            });
        }
        classes.push(ClassReport {
            class: class.clone(),
            group,
            n_gt,
            levels,
        });
    }

    let summary = opts
        .lca_levels
        .iter()
        .enumerate()
        .map(|(li, &lca)| {
            let ap_of = |c: &ClassReport| c.levels[li].ap;
            let groups = CardinalityGroup::ALL
                .iter()
                .map(|g| {
                    let m = mean(classes.iter().filter(|c| c.group == *g).filter_map(ap_of));
                    (*g, m)
                })
                .collect();
            LevelSummary {
                lca,
                map: mean(classes.iter().filter_map(ap_of)),
                groups,
            }
        })
        .collect();

    EvalReport {
        config: ReportConfig {
            criterion,
            thresholds: opts.thresholds.clone(),
            lca_levels: opts.lca_levels.clone(),
            ap_mode: opts.ap_mode,
            zero_gt: opts.zero_gt,
            range,
            generated_at: None,
        },
        summary,
        classes,
    }
}

/// Evaluation tasks in report order: class-major, then LCA level, then
/// threshold.
fn tasks<'t>(taxonomy: &'t Taxonomy, opts: &EvalOptions) -> Vec<(&'t str, u8, f64)> {
    let mut out = Vec::new();
    for c in taxonomy.fine_classes() {
        for &l in &opts.lca_levels {
            for &t in &opts.thresholds {
                out.push((c.as_str(), l, t));
            }
        }
    }
    out
}

/// Center-distance evaluation at the LCA levels listed in `opts`.
pub fn evaluate(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    evaluate_in_range(dets, gts, taxonomy, opts, None)
}

fn evaluate_in_range(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
    range: Option<DistanceRange>,
) -> Result<EvalReport, EvalError> {
    opts.validate()?;
    let work = tasks(taxonomy, opts);
    let pools: BTreeMap<(&str, u8), Vec<&str>> = work
        .iter()
        .map(|(c, l, _)| Ok(((*c, *l), taxonomy.siblings_within(c, *l)?)))
        .collect::<Result<_, TaxonomyError>>()?;
    let results = par::map(&work, |(class, lca, t)| {
        let pool = &pools[&(*class, *lca)];
        let (ranked, n_gt) = rank_and_label(dets, gts, class, pool, |d| d.score, center_cost(*t));
        ap_result(
            class,
            *lca,
            *t,
            &ranked,
            n_gt,
            opts.ap_mode,
            opts.keep_curves,
        )
    });
    Ok(assemble_report(
        taxonomy,
        opts,
        MatchCriterion::CenterDistance,
        results,
        range,
    ))
}

/// Standard mAP: LCA 0 only, regardless of `opts.lca_levels`.
pub fn map(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let opts = EvalOptions {
        lca_levels: vec![0],
        ..opts.clone()
    };
    evaluate(dets, gts, taxonomy, &opts)
}

/// mAP at LCA levels 0, 1 and 2.
pub fn map_hierarchical(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let opts = EvalOptions {
        lca_levels: vec![0, 1, 2],
        ..opts.clone()
    };
    evaluate(dets, gts, taxonomy, &opts)
}

/// Evaluates only objects whose BEV distance from the ego origin lies in
/// `range`; detections and ground truth outside it are dropped first.
pub fn range_filtered_eval(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    range: DistanceRange,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let d = dets.filter(|d| range.contains(d.box3d.ego_distance()));
    let g = gts.filter(|g| range.contains(g.ego_distance()));
    evaluate_in_range(&d, &g, taxonomy, opts, Some(range))
}

/// Image-plane evaluation; `opts.thresholds` are IoU thresholds.
pub fn eval_2d(
    dets: &Detection2DSet,
    gts: &GroundTruth2DSet,
    taxonomy: &Taxonomy,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    opts.validate()?;
    if let Some(t) = opts.thresholds.iter().find(|t| **t > 1.0) {
        return Err(EvalError::BadThreshold(*t));
    }
    let work = tasks(taxonomy, opts);
    let pools: BTreeMap<(&str, u8), Vec<&str>> = work
        .iter()
        .map(|(c, l, _)| Ok(((*c, *l), taxonomy.siblings_within(c, *l)?)))
        .collect::<Result<_, TaxonomyError>>()?;
    let results = par::map(&work, |(class, lca, t)| {
        let pool = &pools[&(*class, *lca)];
        let (ranked, n_gt) = rank_and_label(dets, gts, class, pool, |d| d.score, iou_cost(*t));
        ap_result(
            class,
            *lca,
            *t,
            &ranked,
            n_gt,
            opts.ap_mode,
            opts.keep_curves,
        )
    });
    Ok(assemble_report(
        taxonomy,
        opts,
        MatchCriterion::Iou2d,
        results,
        None,
    ))
}

/// Row-normalized confusion counts among the fine classes of a superclass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub superclass: String,
    pub distance: f64,
    pub classes: Vec<String>,
    /// `counts[i][j]`: class-`i` predictions matched to class-`j` ground truth.
    pub counts: Vec<Vec<u64>>,
    /// Rows of `counts` normalized to sum to 1; all-zero rows stay zero.
    pub rates: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn matched_pairs(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// For each fine class `i` of `superclass`, greedily matches its
/// predictions (descending score, nearest first) to ground truth of any
/// class in the superclass within `dist`; unmatched predictions are
/// ignored.
pub fn confusion_matrix(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    superclass: &str,
    dist: f64,
) -> Result<ConfusionMatrix, EvalError> {
    if !(dist.is_finite() && dist > 0.0) {
        return Err(EvalError::BadThreshold(dist));
    }
    let members = &taxonomy.superclass(superclass)?.children;
    let index_of = |c: &str| members.iter().position(|m| m == c);
    let rows = par::map(members, |class| {
        let mut row = vec![0u64; members.len()];
        for (frame_id, frame_dets) in dets.frames() {
            let cand: Vec<&Detection3D> = frame_dets.iter().filter(|d| &d.class == class).collect();
            if cand.is_empty() {
                continue;
            }
            let targets: Vec<(&GroundTruth3D, usize)> = gts
                .frame(frame_id)
                .iter()
                .filter_map(|g| index_of(&g.class).map(|j| (g, j)))
                .collect();
            let scores: Vec<f64> = cand.iter().map(|d| d.score).collect();
            let m = greedy_match_with(&scores, targets.len(), |d, t| {
                let dd = bev_center_distance(&cand[d].box3d, &targets[t].0.box3d);
                (dd <= dist).then_some(dd)
            });
            for (_, t) in m.pairs {
                row[targets[t].1] += 1;
            }
        }
        row
    });
    let rates = rows
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|c| {
                    if total == 0 {
                        0.0
                    } else {
                        *c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        superclass: superclass.to_owned(),
        distance: dist,
        classes: members.clone(),
        counts: rows,
        rates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallLevel {
    Fine,
    Coarse,
}

/// Restricts which ground truth counts toward recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GtFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Visibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<DistanceRange>,
}

impl GtFilter {
    pub fn accepts(&self, g: &GroundTruth3D) -> bool {
        if let Some(v) = self.visibility {
            if g.visibility != Some(v) {
                return false;
            }
        }
        if let Some(r) = self.range {
            if !r.contains(g.ego_distance()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecall {
    pub group: String,
    pub n_gt: usize,
    pub matched: usize,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub threshold: f64,
    pub level: RecallLevel,
    pub filter: GtFilter,
    pub groups: Vec<GroupRecall>,
}

impl RecallReport {
    pub fn recall_of(&self, group: &str) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.group == group)
            .and_then(|g| g.recall)
    }
}

/// Fraction of (filtered) ground truth that has at least one detection
/// within `threshold` of an acceptable class: the same fine class, or any
/// fine class of the same superclass at [`RecallLevel::Coarse`].
pub fn average_recall(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    taxonomy: &Taxonomy,
    threshold: f64,
    level: RecallLevel,
    filter: GtFilter,
) -> Result<RecallReport, EvalError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let group_names: Vec<String> = match level {
        RecallLevel::Fine => taxonomy.fine_classes().to_vec(),
        RecallLevel::Coarse => taxonomy
            .superclasses()
            .iter()
            .map(|s| s.name.clone())
            .collect(),
    };
    let group_of = |class: &str| -> Option<String> {
        match level {
            RecallLevel::Fine => taxonomy.is_fine(class).then(|| class.to_owned()),
            RecallLevel::Coarse => taxonomy.parent_of(class).ok().map(str::to_owned),
        }
    };
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (frame_id, frame_gts) in gts.frames() {
        let frame_dets = dets.frame(frame_id);
        for g in frame_gts.iter().filter(|g| filter.accepts(g)) {
            let Some(key) = group_of(&g.class) else {
                continue;
            };
            let hit = frame_dets.iter().any(|d| {
                group_of(&d.class).as_deref() == Some(key.as_str())
                    && bev_center_distance(&d.box3d, &g.box3d) <= threshold
            });
            let e = tally.entry(key).or_default();
            e.0 += 1;
            e.1 += usize::from(hit);
        }
    }
    let groups = group_names
        .into_iter()
        .map(|g| {
            let (n_gt, matched) = tally.get(&g).copied().unwrap_or_default();
            GroupRecall {
                recall: (n_gt > 0).then(|| matched as f64 / n_gt as f64),
                group: g,
                n_gt,
                matched,
            }
        })
        .collect();
    Ok(RecallReport {
        threshold,
        level,
        filter,
        groups,
    })
}
