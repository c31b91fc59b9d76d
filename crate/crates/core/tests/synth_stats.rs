//! Frequency checks on the synthetic generator over many frames.

use lt3d::eval;
use lt3d::synth::{Scenario, ScenarioConfig};
use serde_json::json;

fn config(n_frames: usize) -> serde_json::Value {
    json!({
        "seed": 7,
        "n_frames": n_frames,
        "taxonomy": {
            "root": "object",
            "coarse": [
                {"name": "vehicle", "children": ["car", "truck"]},
                {"name": "pedestrian", "children": ["adult", "child"]}
            ],
            "train_counts": {"car": 100000, "truck": 20000, "adult": 60000, "child": 1000}
        },
        "classes": {
            "car": {"spawn_rate": 4.0},
            "truck": {"spawn_rate": 1.0},
            "adult": {"spawn_rate": 3.0},
            "child": {"spawn_rate": 0.5}
        },
        "extent_m": 40.0,
        "min_distance_m": 3.0,
        "lidar": {
            "recall_by_range": [{"max_m": 1000.0, "recall": 1.0}],
            "localization_sigma_m": 0.0,
            "underconfidence_temperature": 1.0,
            "logit_correct": {"mean": 2.0, "sigma": 1.0},
            "logit_confused": {"mean": 0.0, "sigma": 1.0},
            "false_positives_per_frame": 0.0,
            "logit_false_positive": {"mean": -1.0, "sigma": 1.0}
        },
        "rgb": {
            "accuracy": 1.0,
            "jitter_px": 0.0,
            "default_recall": 1.0,
            "false_positives_per_frame": 0.0,
            "logit_correct": {"mean": 2.0, "sigma": 1.0},
            "logit_confused": {"mean": 0.0, "sigma": 1.0},
            "logit_false_positive": {"mean": -1.0, "sigma": 1.0}
        }
    })
}

fn scenario(v: serde_json::Value) -> Scenario {
    Scenario::from_config(serde_json::from_value::<ScenarioConfig>(v).unwrap()).unwrap()
}

#[test]
fn class_frequencies_follow_spawn_rates() {
    let n = 10_000;
    let s = scenario(config(n));
    let gt = s.generate_scene();
    assert_eq!(gt.frames().count(), n);
    for (class, rate) in [("car", 4.0), ("truck", 1.0), ("adult", 3.0), ("child", 0.5)] {
        let seen = gt.iter().filter(|g| g.class == class).count() as f64 / n as f64;
        assert!(
            (seen / rate - 1.0).abs() < 0.05,
            "{class}: {seen} per frame vs {rate}"
        );
    }
}

#[test]
fn lidar_recall_matches_configuration() {
    let mut v = config(2_000);
    v["lidar"]["recall_by_range"] = json!([{"max_m": 1000.0, "recall": 0.8}]);
    let s = scenario(v);
    let gt = s.generate_scene();
    let dets = s.simulate_lidar_detector(&gt);
    let r = dets.len() as f64 / gt.len() as f64;
    assert!((r - 0.8).abs() < 0.02, "recall {r}");
}

#[test]
fn confusion_kernel_is_recovered() {
    let mut v = config(4_000);
    v["lidar"]["confusion"] = json!({"adult": {"adult": 0.7, "child": 0.3}});
    let s = scenario(v);
    let gt = s.generate_scene();
    let dets = s.simulate_lidar_detector(&gt);
    let cm = eval::confusion_matrix(&dets, &gt, &s.taxonomy, "pedestrian", 2.0).unwrap();
    let idx = |c: &str| cm.classes.iter().position(|x| x == c).unwrap();
    let (adult, child) = (idx("adult"), idx("child"));
    // rows are predictions, columns ground truth
    let adult_total: u64 = cm.counts.iter().map(|row| row[adult]).sum();
    let rate = cm.counts[child][adult] as f64 / adult_total as f64;
    assert!((rate - 0.3).abs() < 0.02, "adult->child {rate}");
    assert_eq!(cm.counts[adult][child], 0);
}

#[test]
fn identity_kernel_gives_identity_matrix() {
    let s = scenario(config(1_000));
    let gt = s.generate_scene();
    let dets = s.simulate_lidar_detector(&gt);
    for sup in ["vehicle", "pedestrian"] {
        let cm = eval::confusion_matrix(&dets, &gt, &s.taxonomy, sup, 2.0).unwrap();
        for (i, row) in cm.rates.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                assert_eq!(*r, if i == j { 1.0 } else { 0.0 }, "{sup} {i},{j}");
            }
        }
    }
}

#[test]
fn rgb_recall_matches_configuration() {
    let mut v = config(2_000);
    v["rgb"]["default_recall"] = json!(0.9);
    let s = scenario(v);
    let gt = s.generate_scene();
    let visible = s.project_ground_truth(&gt);
    let dets = s.simulate_rgb_detector(&gt);
    let r = dets.len() as f64 / visible.len() as f64;
    assert!((r - 0.9).abs() < 0.02, "recall {r}");
}

#[test]
fn generation_is_reproducible_and_seed_sensitive() {
    let a = scenario(config(50)).simulate();
    let b = scenario(config(50)).simulate();
    assert_eq!(a.gt, b.gt);
    assert_eq!(a.lidar, b.lidar);
    assert_eq!(a.rgb2d, b.rgb2d);
    let mut v = config(50);
    v["seed"] = json!(8);
    assert_ne!(scenario(v).simulate().gt, a.gt);
}
