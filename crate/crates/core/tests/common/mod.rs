#![allow(dead_code)]

use lt3d::detections::Source;
use lt3d::{Box3D, Detection3D, DetectionSet, GroundTruth3D, GroundTruthSet, Taxonomy, Vec3};
use lt3d_oracle::{PointDet, PointFrame, PointGt};
use proptest::prelude::*;

pub const FINE: [&str; 5] = ["car", "truck", "adult", "child", "barrier"];

pub fn taxonomy() -> Taxonomy {
    Taxonomy::from_json_str(
        r#"{"root":"object","coarse":[
            {"name":"vehicle","children":["car","truck"]},
            {"name":"pedestrian","children":["adult","child"]},
            {"name":"movable","children":["barrier"]}],
            "train_counts":{"car":90000,"truck":20000,"adult":70000,"child":900,"barrier":6000}}"#,
        "test-taxonomy",
    )
    .unwrap()
}

/// Parent of each fine class, written out by hand.
pub fn parent(c: &str) -> &'static str {
    match c {
        "car" | "truck" => "vehicle",
        "adult" | "child" => "pedestrian",
        "barrier" => "movable",
        _ => panic!("unknown class {c}"),
    }
}

/// Classes whose ground truth a `c` detection may be ignored against.
pub fn ignore_pool(c: &str, lca: u8) -> Vec<&'static str> {
    FINE.iter()
        .copied()
        .filter(|o| *o != c)
        .filter(|o| match lca {
            0 => false,
            1 => parent(o) == parent(c),
            _ => true,
        })
        .collect()
}

pub fn bx(x: f64, y: f64) -> Box3D {
    Box3D::new(Vec3::new(x, y, 0.5), 1.0, 1.0, 1.0, 0.0).unwrap()
}

pub fn det(frame: &str, class: &str, score: f64, x: f64, y: f64) -> Detection3D {
    Detection3D {
        frame_id: frame.into(),
        box3d: bx(x, y),
        class: class.into(),
        score,
        logit: None,
        source: Source::Lidar,
    }
}

pub fn gt(frame: &str, class: &str, x: f64, y: f64) -> GroundTruth3D {
    GroundTruth3D {
        frame_id: frame.into(),
        box3d: bx(x, y),
        class: class.into(),
        visibility: None,
    }
}

/// Oracle frames in the detection set's frame order, then any frames that
/// only carry ground truth.
pub fn point_frames(dets: &DetectionSet, gts: &GroundTruthSet) -> Vec<PointFrame> {
    let mut ids: Vec<&str> = dets.frame_ids().collect();
    for id in gts.frame_ids() {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids.iter()
        .map(|id| PointFrame {
            dets: dets
                .frame(id)
                .iter()
                .map(|d| PointDet {
                    class: d.class.clone(),
                    score: d.score,
                    x: d.box3d.center.x,
                    y: d.box3d.center.y,
                })
                .collect(),
            gts: gts
                .frame(id)
                .iter()
                .map(|g| PointGt {
                    class: g.class.clone(),
                    x: g.box3d.center.x,
                    y: g.box3d.center.y,
                })
                .collect(),
        })
        .collect()
}

fn score() -> impl Strategy<Value = f64> {
    // coarse values force ties
    prop_oneof![(1u32..=9).prop_map(|k| k as f64 / 10.0), 0.0..1.0f64]
}

fn coord() -> impl Strategy<Value = f64> {
    0.0..6.0f64
}

/// Small random instance: 1-3 frames, 2-4 classes, at most 8 detections
/// and 5 ground-truth objects per class.
pub fn instance() -> impl Strategy<Value = (DetectionSet, GroundTruthSet)> {
    (
        1usize..=3,
        proptest::sample::subsequence(FINE.to_vec(), 2..=4),
    )
        .prop_flat_map(|(nf, classes)| {
            let per_class = classes
                .into_iter()
                .map(move |c| {
                    (
                        proptest::collection::vec((0..nf, score(), coord(), coord()), 0..=8),
                        proptest::collection::vec((0..nf, coord(), coord()), 0..=5),
                    )
                        .prop_map(move |(d, g)| (c, d, g))
                })
                .collect::<Vec<_>>();
            (Just(nf), per_class)
        })
        .prop_map(|(nf, per_class)| {
            let mut dets = DetectionSet::new();
            let mut gts = GroundTruthSet::new();
            for f in 0..nf {
                dets.ensure_frame(&format!("f{f}"));
                gts.ensure_frame(&format!("f{f}"));
            }
            for (c, ds, gs) in per_class {
                for (f, s, x, y) in ds {
                    dets.push(det(&format!("f{f}"), c, s, x, y));
                }
                for (f, x, y) in gs {
                    gts.push(gt(&format!("f{f}"), c, x, y));
                }
            }
            (dets, gts)
        })
}
