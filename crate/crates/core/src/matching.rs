//! Correspondence procedures: score-greedy matching for metrics, and
//! cross-modal matching on the image plane or in 3D.
//!
//! Every procedure here is greedy. Results are canonicalized (pairs sorted
//! by detection index, unmatched lists ascending) so identical inputs give
//! identical outputs.

use crate::detections::{Detection2D, Detection3D};
use crate::geometry::{bev_center_distance, iou_2d, Box2D, Box3D};
use std::cmp::Ordering;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// (detection index, target index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_targets: Vec<usize>,
}

impl MatchResult {
    fn from_assignment(det_to_target: &[Option<usize>], n_targets: usize) -> Self {
        let mut target_used = vec![false; n_targets];
        let mut pairs = Vec::new();
        let mut unmatched_detections = Vec::new();
        for (d, t) in det_to_target.iter().enumerate() {
            match t {
                Some(t) => {
                    target_used[*t] = true;
                    pairs.push((d, *t));
                }
                None => unmatched_detections.push(d),
            }
        }
        let unmatched_targets = (0..n_targets).filter(|t| !target_used[*t]).collect();
        Self {
            pairs,
            unmatched_detections,
            unmatched_targets,
        }
    }

    /// Target matched to detection `d`, if any.
    pub fn target_of(&self, d: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&d, |p| p.0)
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

/// Indices sorted by descending score; equal scores keep ascending index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Score-ordered one-to-one greedy assignment.
///
/// Detections are visited in [`score_order`]. Each takes the not-yet-used
/// target with the smallest cost, where `cost` returns `None` for
/// ineligible pairs. Equal costs resolve to the lower target index.
pub fn greedy_match_with<F>(scores: &[f64], n_targets: usize, mut cost: F) -> MatchResult
where
    F: FnMut(usize, usize) -> Option<f64>,
{
    let mut used = vec![false; n_targets];
    let mut assignment = vec![None; scores.len()];
    for d in score_order(scores) {
        let mut best: Option<(f64, usize)> = None;
        for (t, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            if let Some(c) = cost(d, t) {
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, t));
                }
            }
        }
        if let Some((_, t)) = best {
            used[t] = true;
            assignment[d] = Some(t);
        }
    }
    MatchResult::from_assignment(&assignment, n_targets)
}

/// Center-distance matching used by the metrics: each detection, in
/// descending score order, takes the nearest unmatched ground truth whose
/// BEV center distance is at most `threshold`.
pub fn greedy_match_eval(dets: &[(f64, Box3D)], gts: &[Box3D], threshold: f64) -> MatchResult {
    let scores: Vec<f64> = dets.iter().map(|d| d.0).collect();
    greedy_match_with(&scores, gts.len(), |d, g| {
        let dist = bev_center_distance(&dets[d].1, &gts[g]);
        (dist <= threshold).then_some(dist)
    })
}

/// A LiDAR detection projected into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedBox {
    /// Index of the LiDAR detection in its frame.
    pub detection: usize,
    pub camera_id: String,
    pub bbox: Box2D,
}

/// Image-plane matching of projected LiDAR boxes against 2D RGB detections.
///
/// Candidate pairs share a camera and have IoU strictly above
/// `iou_threshold`. They are accepted greedily by descending IoU (ties by
/// ascending LiDAR index, then RGB index) so that each LiDAR detection and
/// each RGB detection appears in at most one pair, whichever camera it came
/// from. Class labels play no part here.
pub fn match_cross_modal_2d(
    n_lidar: usize,
    projections: &[ProjectedBox],
    rgb: &[Detection2D],
    iou_threshold: f64,
) -> MatchResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for p in projections {
        for (r, det) in rgb.iter().enumerate() {
            if det.camera_id != p.camera_id {
                continue;
            }
            let iou = iou_2d(&p.bbox, &det.box2d);
            if iou > iou_threshold {
                candidates.push((iou, p.detection, r));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut assignment = vec![None; n_lidar];
    let mut rgb_used = vec![false; rgb.len()];
    for (_, l, r) in candidates {
        if assignment[l].is_none() && !rgb_used[r] {
            assignment[l] = Some(r);
            rgb_used[r] = true;
        }
    }
    MatchResult::from_assignment(&assignment, rgb.len())
}

/// Radius test between LiDAR and RGB 3D detections.
///
/// A LiDAR detection is matched when some RGB detection (of the same class
/// if `class_aware`) lies within `radius_m` in BEV center distance; the pair
/// records the nearest such RGB detection. Several LiDAR detections may
/// point at the same RGB detection, so unlike the other matchers this
/// result is many-to-one.
pub fn match_cross_modal_3d(
    lidar: &[Detection3D],
    rgb3d: &[Detection3D],
    radius_m: f64,
    class_aware: bool,
) -> MatchResult {
    let mut referenced = vec![false; rgb3d.len()];
    let mut pairs = Vec::new();
    let mut unmatched_detections = Vec::new();
    for (l, ld) in lidar.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (r, rd) in rgb3d.iter().enumerate() {
            if class_aware && rd.class != ld.class {
                continue;
            }
            let dist = bev_center_distance(&ld.box3d, &rd.box3d);
            if dist <= radius_m && best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, r));
            }
        }
        match best {
            Some((_, r)) => {
                referenced[r] = true;
                pairs.push((l, r));
            }
            None => unmatched_detections.push(l),
        }
    }
    MatchResult {
        pairs,
        unmatched_detections,
        unmatched_targets: (0..rgb3d.len()).filter(|r| !referenced[*r]).collect(),
    }
}
