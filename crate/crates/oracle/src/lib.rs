//! Brute-force reference implementations for the lt3d test suites.
//!
//! Nothing here depends on `lt3d`: inputs are plain numbers and strings, and
//! every routine takes the most literal route available (linear scans,
//! explicit selection instead of sorting, per-recall-level precision
//! maxima instead of a running envelope). They are slow on purpose.

/// A scored detection reduced to what the metrics look at.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDet {
    pub class: String,
    pub score: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointGt {
    pub class: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointFrame {
    pub dets: Vec<PointDet>,
    pub gts: Vec<PointGt>,
}

/// Image-plane detection: camera id plus rectangle [x1, y1, x2, y2].
#[derive(Debug, Clone, PartialEq)]
pub struct RectDet {
    pub class: String,
    pub camera: String,
    pub score: f64,
    pub rect: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectGt {
    pub class: String,
    pub camera: String,
    pub rect: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RectFrame {
    pub dets: Vec<RectDet>,
    pub gts: Vec<RectGt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    /// Area under the interpolated precision envelope over recall [0, 1].
    AllPoint,
    /// Envelope restricted to recall >= 0.1, precision offset by 0.1,
    /// renormalized so a perfect detector scores 1.
    Clipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Tp,
    Fp,
    Ignored,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ((ax - bx) * (ax - bx) + (ay - by) * (ay - by)).sqrt()
}

pub fn rect_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix1 = if a[0] > b[0] { a[0] } else { b[0] };
    let iy1 = if a[1] > b[1] { a[1] } else { b[1] };
    let ix2 = if a[2] < b[2] { a[2] } else { b[2] };
    let iy2 = if a[3] < b[3] { a[3] } else { b[3] };
    if ix2 <= ix1 || iy2 <= iy1 {
        return 0.0;
    }
    let inter = (ix2 - ix1) * (iy2 - iy1);
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area_a + area_b - inter)
}

/// Order in which greedy procedures visit items: repeatedly select the
/// highest remaining score; the first-listed item wins ties.
pub fn selection_order(scores: &[f64]) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::with_capacity(scores.len());
    for _ in 0..scores.len() {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) if scores[i] > scores[b] => best = Some(i),
                _ => {}
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Greedy one-to-one assignment over an explicit cost table
/// (`None` = ineligible, lower cost preferred, lower target index on ties).
/// Returns, for each detection, the target it received.
pub fn greedy_assignment(scores: &[f64], costs: &[Vec<Option<f64>>]) -> Vec<Option<usize>> {
    let n_targets = costs.first().map_or(0, Vec::len);
    let mut used = vec![false; n_targets];
    let mut out = vec![None; scores.len()];
    for d in selection_order(scores) {
        let mut best: Option<(f64, usize)> = None;
        for t in 0..n_targets {
            if used[t] {
                continue;
            }
            if let Some(c) = costs[d][t] {
                let better = match best {
                    None => true,
                    Some((bc, _)) => c < bc,
                };
                if better {
                    best = Some((c, t));
                }
            }
        }
        if let Some((_, t)) = best {
            used[t] = true;
            out[d] = Some(t);
        }
    }
    out
}

/// Integrates a ranked label sequence. Returns `None` when `n_gt == 0`.
pub fn integrate(labels: &[Label], n_gt: usize, integration: Integration) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    // operating points after every non-ignored detection
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for l in labels {
        match l {
            Label::Ignored => continue,
            Label::Tp => tp += 1,
            Label::Fp => fp += 1,
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut area = 0.0;
    for k in 1..=n_gt {
        let lo = (k - 1) as f64 / n_gt as f64;
        let hi = k as f64 / n_gt as f64;
        // best precision achievable at recall >= hi (step k reached)
        let mut best = 0.0f64;
        for &(r, p) in &points {
            if r >= hi - 1e-12 && p > best {
                best = p;
            }
        }
        match integration {
            Integration::AllPoint => area += (hi - lo) * best,
            Integration::Clipped => {
                let a = if lo > 0.1 { lo } else { 0.1 };
                let width = hi - a;
                if width > 0.0 && best > 0.1 {
                    area += width * (best - 0.1);
                }
            }
        }
    }
    Some(match integration {
        Integration::AllPoint => area,
        Integration::Clipped => area / (0.9 * 0.9),
    })
}

/// Labels every detection of `class` across frames, in global rank order
/// (score descending, then frame index, then position in frame).
///
/// A detection first tries the nearest unmatched same-class ground truth
/// within `threshold` (true positive), then the nearest unmatched ground
/// truth whose class is in `ignore_pool` (ignored), else it is a false
/// positive.
pub fn labels_center_distance(
    frames: &[PointFrame],
    class: &str,
    ignore_pool: &[&str],
    threshold: f64,
) -> (Vec<Label>, usize) {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for (di, d) in f.dets.iter().enumerate() {
            if d.class == class {
                ranked.push((d.score, fi, di));
            }
        }
    }
    let scores: Vec<f64> = ranked.iter().map(|r| r.0).collect();
    let order = selection_order(&scores);

    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.gts.len()]).collect();
    let mut labels = Vec::new();
    for idx in order {
        let (_, fi, di) = ranked[idx];
        let d = &frames[fi].dets[di];
        let nearest = |used: &Vec<bool>, accept: &dyn Fn(&str) -> bool| -> Option<usize> {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in frames[fi].gts.iter().enumerate() {
                if used[gi] || !accept(&g.class) {
                    continue;
                }
                let dist = distance(d.x, d.y, g.x, g.y);
                if dist <= threshold && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, gi));
                }
            }
            best.map(|b| b.1)
        };
        if let Some(g) = nearest(&used[fi], &|c| c == class) {
            used[fi][g] = true;
            labels.push(Label::Tp);
        } else if let Some(g) = nearest(&used[fi], &|c| ignore_pool.contains(&c)) {
            used[fi][g] = true;
            labels.push(Label::Ignored);
        } else {
            labels.push(Label::Fp);
        }
    }
    let n_gt = frames
        .iter()
        .flat_map(|f| &f.gts)
        .filter(|g| g.class == class)
        .count();
    (labels, n_gt)
}

pub fn ap_center_distance(
    frames: &[PointFrame],
    class: &str,
    ignore_pool: &[&str],
    threshold: f64,
    integration: Integration,
) -> Option<f64> {
    let (labels, n_gt) = labels_center_distance(frames, class, ignore_pool, threshold);
    integrate(&labels, n_gt, integration)
}

/// Image-plane analogue of [`labels_center_distance`]: a pair is eligible
/// when cameras agree and IoU >= `threshold`; the highest IoU wins.
pub fn labels_iou(
    frames: &[RectFrame],
    class: &str,
    ignore_pool: &[&str],
    threshold: f64,
) -> (Vec<Label>, usize) {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for (di, d) in f.dets.iter().enumerate() {
            if d.class == class {
                ranked.push((d.score, fi, di));
            }
        }
    }
    let scores: Vec<f64> = ranked.iter().map(|r| r.0).collect();
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.gts.len()]).collect();
    let mut labels = Vec::new();
    for idx in selection_order(&scores) {
        let (_, fi, di) = ranked[idx];
        let d = &frames[fi].dets[di];
        let best_of = |used: &Vec<bool>, accept: &dyn Fn(&str) -> bool| -> Option<usize> {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in frames[fi].gts.iter().enumerate() {
                if used[gi] || !accept(&g.class) || g.camera != d.camera {
                    continue;
                }
                let iou = rect_iou(d.rect, g.rect);
                if iou >= threshold && best.is_none_or(|(bi, _)| iou > bi) {
                    best = Some((iou, gi));
                }
            }
            best.map(|b| b.1)
        };
        if let Some(g) = best_of(&used[fi], &|c| c == class) {
            used[fi][g] = true;
            labels.push(Label::Tp);
        } else if let Some(g) = best_of(&used[fi], &|c| ignore_pool.contains(&c)) {
            used[fi][g] = true;
            labels.push(Label::Ignored);
        } else {
            labels.push(Label::Fp);
        }
    }
    let n_gt = frames
        .iter()
        .flat_map(|f| &f.gts)
        .filter(|g| g.class == class)
        .count();
    (labels, n_gt)
}

pub fn ap_iou(
    frames: &[RectFrame],
    class: &str,
    ignore_pool: &[&str],
    threshold: f64,
    integration: Integration,
) -> Option<f64> {
    let (labels, n_gt) = labels_iou(frames, class, ignore_pool, threshold);
    integrate(&labels, n_gt, integration)
}

/// Mean AP over classes that have ground truth, each class averaged over
/// `thresholds` at LCA 0. `None` when no class has ground truth.
pub fn map_center_distance(
    frames: &[PointFrame],
    classes: &[&str],
    thresholds: &[f64],
    integration: Integration,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in classes {
        let mut class_sum = 0.0;
        let mut defined = true;
        for t in thresholds {
            match ap_center_distance(frames, c, &[], *t, integration) {
                Some(a) => class_sum += a,
                None => defined = false,
            }
        }
        if defined {
            sum += class_sum / thresholds.len() as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Confusion counts for one superclass: `counts[i][j]` is how many
/// class-`i` predictions matched a class-`j` ground truth, where each
/// class's predictions are greedily matched (nearest within `dist`) to the
/// superclass's ground truths independently of the other classes.
pub fn confusion_counts(frames: &[PointFrame], members: &[&str], dist: f64) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; members.len()]; members.len()];
    for (i, ci) in members.iter().enumerate() {
        for f in frames {
            let dets: Vec<&PointDet> = f.dets.iter().filter(|d| d.class == *ci).collect();
            let gts: Vec<&PointGt> = f
                .gts
                .iter()
                .filter(|g| members.contains(&g.class.as_str()))
                .collect();
            let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
            let costs: Vec<Vec<Option<f64>>> = dets
                .iter()
                .map(|d| {
                    gts.iter()
                        .map(|g| {
                            let dd = distance(d.x, d.y, g.x, g.y);
                            (dd <= dist).then_some(dd)
                        })
                        .collect()
                })
                .collect();
            for t in greedy_assignment(&scores, &costs).into_iter().flatten() {
                let j = members.iter().position(|m| *m == gts[t].class).unwrap();
                counts[i][j] += 1;
            }
        }
    }
    counts
}

/// Pairwise radius predicate: keep LiDAR detection `l` iff some RGB
/// detection (of the same class when `class_aware`) lies within `radius`.
pub fn mmf_keep(lidar: &[PointDet], rgb: &[PointDet], radius: f64, class_aware: bool) -> Vec<bool> {
    lidar
        .iter()
        .map(|l| {
            rgb.iter().any(|r| {
                (!class_aware || r.class == l.class) && distance(l.x, l.y, r.x, r.y) <= radius
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class: &str, score: f64, x: f64) -> PointDet {
        PointDet {
            class: class.into(),
            score,
            x,
            y: 0.0,
        }
    }

    fn gt(class: &str, x: f64) -> PointGt {
        PointGt {
            class: class.into(),
            x,
            y: 0.0,
        }
    }

    #[test]
    fn tp_then_fp_over_two_gt_is_half() {
        let f = PointFrame {
            dets: vec![det("car", 0.9, 0.0), det("car", 0.8, 50.0)],
            gts: vec![gt("car", 0.0), gt("car", 100.0)],
        };
        let ap = ap_center_distance(&[f], "car", &[], 1.0, Integration::AllPoint).unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_clipped_is_one() {
        let f = PointFrame {
            dets: vec![det("car", 0.9, 0.0)],
            gts: vec![gt("car", 0.0)],
        };
        let ap = ap_center_distance(&[f], "car", &[], 1.0, Integration::Clipped).unwrap();
        assert!((ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn selection_breaks_ties_by_position() {
        assert_eq!(selection_order(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }
}
