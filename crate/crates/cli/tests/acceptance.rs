//! Acceptance suite. Runs every criterion, prints one line per criterion
//! and exits non-zero if any fails.
//!
//! `LT3D_WRITE_BASELINE=1` regenerates the committed scenario baseline.

use lt3d::detections::{load_records, save_records, Detection2D, Source};
use lt3d::eval::{self, ApMode, EvalOptions};
use lt3d::fusion::{self, CalibrationTable, FusedModel, FusionConfig, FusionTuner};
use lt3d::geometry::{perturb_extrinsics, project_to_rig};
use lt3d::synth::{Scenario, ScenarioConfig, SyntheticData};
use lt3d::{
    Box3D, CameraRig, CardinalityGroup, Detection2DSet, Detection3D, DetectionSet, GroundTruth3D,
    GroundTruthSet, Taxonomy, Vec3,
};
use lt3d_oracle::{self as oracle, Integration, PointDet, PointFrame, PointGt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const TOL: f64 = 1e-9;
const MANIFEST: &str = env!("CARGO_MANIFEST_DIR");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn scenario_path() -> PathBuf {
    Path::new(MANIFEST).join("../core/scenarios/long_tail.json")
}

fn baseline_path() -> PathBuf {
    Path::new(MANIFEST).join("../core/scenarios/long_tail.baseline.json")
}

// ---------------------------------------------------------------------------
// random small instances

const FINE: [&str; 5] = ["car", "truck", "adult", "child", "barrier"];

fn small_taxonomy() -> Taxonomy {
    Taxonomy::from_json_str(
        r#"{"root":"object","coarse":[
            {"name":"vehicle","children":["car","truck"]},
            {"name":"pedestrian","children":["adult","child"]},
            {"name":"movable","children":["barrier"]}],
            "train_counts":{"car":90000,"truck":20000,"adult":70000,"child":900,"barrier":6000}}"#,
        "acceptance",
    )
    .unwrap()
}

fn parent(c: &str) -> &'static str {
    match c {
        "car" | "truck" => "vehicle",
        "adult" | "child" => "pedestrian",
        _ => "movable",
    }
}

fn ignore_pool(c: &str, lca: u8) -> Vec<&'static str> {
    FINE.iter()
        .copied()
        .filter(|o| *o != c && (lca >= 2 || (lca == 1 && parent(o) == parent(c))))
        .collect()
}

fn unit_box(x: f64, y: f64) -> Box3D {
    Box3D::new(Vec3::new(x, y, 0.5), 1.0, 1.0, 1.0, 0.0).unwrap()
}

fn lidar_det(frame: &str, class: &str, score: f64, b: Box3D) -> Detection3D {
    Detection3D {
        frame_id: frame.into(),
        box3d: b,
        class: class.into(),
        score,
        logit: None,
        source: Source::Lidar,
    }
}

/// 1-3 frames, 2-4 classes, at most 8 detections and 5 ground-truth
/// objects per class; coarse scores make ties common.
fn random_instance(rng: &mut ChaCha8Rng) -> (DetectionSet, GroundTruthSet) {
    let nf = rng.random_range(1..=3);
    let frames: Vec<String> = (0..nf).map(|f| format!("f{f}")).collect();
    let mut classes = FINE.to_vec();
    for i in (1..classes.len()).rev() {
        classes.swap(i, rng.random_range(0..=i));
    }
    classes.truncate(rng.random_range(2..=4));
    let mut dets = DetectionSet::new();
    let mut gts = GroundTruthSet::new();
    for f in &frames {
        dets.ensure_frame(f);
    }
    for c in classes {
        for _ in 0..rng.random_range(0..=8) {
            let f = &frames[rng.random_range(0..nf)];
            let score = if rng.random_bool(0.5) {
                rng.random_range(1..=9) as f64 / 10.0
            } else {
                rng.random::<f64>()
            };
            dets.push(lidar_det(
                f,
                c,
                score,
                unit_box(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)),
            ));
        }
        for _ in 0..rng.random_range(0..=5) {
            let f = &frames[rng.random_range(0..nf)];
            gts.push(GroundTruth3D {
                frame_id: f.clone(),
                box3d: unit_box(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)),
                class: c.into(),
                visibility: None,
            });
        }
    }
    (dets, gts)
}

fn point_frames(dets: &DetectionSet, gts: &GroundTruthSet) -> Vec<PointFrame> {
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

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= TOL,
        (None, None) => true,
        _ => false,
    }
}

const INSTANCES: usize = 1000;

fn instances() -> &'static Vec<(DetectionSet, GroundTruthSet)> {
    static CELL: OnceLock<Vec<(DetectionSet, GroundTruthSet)>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
        (0..INSTANCES).map(|_| random_instance(&mut rng)).collect()
    })
}

// ---------------------------------------------------------------------------
// criteria

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let tax = small_taxonomy();
    let mut checks = 0usize;
    for (i, (dets, gts)) in instances().iter().enumerate() {
        let frames = point_frames(dets, gts);
        for class in FINE {
            for lca in 0..=2u8 {
                let pool = ignore_pool(class, lca);
                for t in eval::DEFAULT_THRESHOLDS {
                    for (mode, integ) in [
                        (ApMode::AllPoint, Integration::AllPoint),
                        (ApMode::NuScenesClipped, Integration::Clipped),
                    ] {
                        let got = eval::average_precision(dets, gts, &tax, class, t, lca, mode)
                            .map_err(|e| e.to_string())?
                            .ap;
                        let want = oracle::ap_center_distance(&frames, class, &pool, t, integ);
                        ensure!(close(got, want), "instance {i} {class} lca {lca} t {t} {mode:?}: {got:?} vs oracle {want:?}");
                        checks += 1;
                    }
                }
            }
        }
    }
    let dt = t0.elapsed();
    ensure!(dt < Duration::from_secs(30), "took {dt:?}");
    Ok(format!(
        "{INSTANCES} instances, {checks} AP values within {TOL:e} in {:.2}s",
        dt.as_secs_f64()
    ))
}

fn lca_monotonicity() -> Outcome {
    let tax = small_taxonomy();
    let mut compared = 0usize;
    for (i, (dets, gts)) in instances().iter().enumerate() {
        for class in FINE {
            for t in eval::DEFAULT_THRESHOLDS {
                for mode in [ApMode::AllPoint, ApMode::NuScenesClipped] {
                    let ap = |lca| {
                        eval::average_precision(dets, gts, &tax, class, t, lca, mode)
                            .unwrap()
                            .ap
                    };
                    match (ap(0), ap(1), ap(2)) {
                        (Some(a0), Some(a1), Some(a2)) => {
                            ensure!(
                                a0 <= a1 && a1 <= a2,
                                "instance {i} {class} t {t} {mode:?}: {a0} {a1} {a2}"
                            );
                            compared += 1;
                        }
                        (None, None, None) => {}
                        other => {
                            return Err(format!(
                                "instance {i} {class}: defined at some levels only {other:?}"
                            ))
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "AP0 <= AP1 <= AP2 on {compared} class/threshold/mode triples"
    ))
}

fn fusion_algebra() -> Outcome {
    let f = |a, b, p| fusion::probabilistic_fuse(a, b, p, true).unwrap();
    ensure!(
        f(0.8, 0.6, 0.5) == 0.96,
        "fuse(0.8, 0.6, 0.5) = {}",
        f(0.8, 0.6, 0.5)
    );
    for (a, b) in [
        (0.8, 0.6),
        (0.3, 0.7),
        (1.0, 0.25),
        (0.0, 0.9),
        (0.123456789, 0.987654321),
    ] {
        ensure!(
            f(a, b, 1.0) == a * b,
            "unit prior: fuse({a}, {b}) = {} != {}",
            f(a, b, 1.0),
            a * b
        );
    }
    ensure!(f(0.9, 0.9, 0.5) == 1.0, "clip: {}", f(0.9, 0.9, 0.5));
    ensure!(f(1.0, 1.0, 0.01) == 1.0, "clip at extreme prior");
    let unclipped = fusion::probabilistic_fuse(0.9, 0.9, 0.5, false).unwrap();
    ensure!(unclipped > 1.0, "unclipped value {unclipped}");
    Ok("0.96, product at unit prior, clip at 1.0".into())
}

/// Frame with LiDAR objects at fixed spots in front of the ego vehicle and
/// RGB boxes copied from their projections.
fn contract_frame() -> (
    CameraRig,
    DetectionSet,
    Vec<(String, lt3d::geometry::Box2D)>,
) {
    let rig = CameraRig::surround_view();
    let mut lidar = DetectionSet::new();
    let mut hulls = Vec::new();
    for (i, (x, y, class, logit)) in [
        (12.0, 0.0, "car", 1.2),
        (20.0, 4.0, "truck", 0.3),
        (-15.0, 2.0, "adult", -0.4),
        (3.0, 18.0, "barrier", 2.0),
        (0.0, -25.0, "car", 0.0),
    ]
    .into_iter()
    .enumerate()
    {
        let b = Box3D::new(Vec3::new(x, y, 0.9), 4.0, 2.0, 1.8, 0.1 * i as f64).unwrap();
        let mut d = lidar_det("frame-000000", class, 1.0 / (1.0 + f64::exp(-logit)), b);
        d.logit = Some(logit);
        let (cam, hull) = project_to_rig(&b, &rig)
            .into_iter()
            .max_by(|a, b| a.1.area().total_cmp(&b.1.area()))
            .unwrap();
        hulls.push((cam.to_owned(), hull));
        lidar.push(d);
    }
    (rig, lidar, hulls)
}

fn mmlf_contract() -> Outcome {
    let (rig, lidar, hulls) = contract_frame();
    let cfg = FusionConfig::default();
    let tax = small_taxonomy();
    let neutral = CalibrationTable::neutral("n", &tax);

    // no images: everything is down-weighted by exactly w
    let out = fusion::mmlf_fuse(
        &lidar,
        &Detection2DSet::new(),
        &rig,
        &neutral,
        &neutral,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        out.len() == lidar.len(),
        "count {} vs {}",
        out.len(),
        lidar.len()
    );
    for d in lidar.iter() {
        let o = out
            .iter()
            .find(|o| o.box3d == d.box3d)
            .ok_or("lost a detection")?;
        ensure!(
            o.score == 0.4 * d.score && o.class == d.class,
            "{}: {} vs 0.4 x {}",
            d.class,
            o.score,
            d.score
        );
    }

    let mut lt = CalibrationTable::new("lidar");
    lt.set_temperature("car", 2.0).unwrap();
    let mut rt = CalibrationTable::new("rgb");
    rt.set_temperature("truck", 0.5).unwrap();
    rt.set_temperature("car", 1.5).unwrap();
    rt.set_prior("car", 0.7).unwrap();
    let rgb_det = |i: usize, class: &str, logit: f64| {
        let (cam, hull) = &hulls[i];
        Detection2D {
            frame_id: "frame-000000".into(),
            camera_id: cam.clone(),
            box2d: *hull,
            class: class.into(),
            score: 1.0 / (1.0 + f64::exp(-logit)),
            logit: Some(logit),
        }
    };
    let mut rgb = Detection2DSet::new();
    rgb.push(rgb_det(0, "car", 2.5)); // agreement
    rgb.push(rgb_det(1, "car", 0.8)); // disagreement: truck vs car
    rgb.push(rgb_det(2, "child", -1.0)); // disagreement within pedestrians
                                         // unmatched RGB box in an empty part of the image
    let (cam, _) = &hulls[0];
    rgb.push(Detection2D {
        frame_id: "frame-000000".into(),
        camera_id: cam.clone(),
        box2d: lt3d::geometry::Box2D::new(0.0, 0.0, 40.0, 40.0).unwrap(),
        class: "bus".into(),
        score: 0.99,
        logit: Some(5.0),
    });
    let out = fusion::mmlf_fuse(&lidar, &rgb, &rig, &lt, &rt, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        out.len() == lidar.len(),
        "unmatched RGB survived: {} outputs",
        out.len()
    );
    ensure!(
        out.iter().all(|o| o.class != "bus"),
        "RGB-only class in output"
    );
    let inputs: Vec<&Detection3D> = lidar.iter().collect();
    let by_box = |b: &Box3D| out.iter().find(|o| o.box3d == *b);
    for o in out.iter() {
        ensure!(
            inputs.iter().any(|d| d.box3d == o.box3d),
            "box not from LiDAR input"
        );
        ensure!(o.source == Source::Fused && o.logit.is_none(), "provenance");
    }
    let sig = |z: f64| 1.0 / (1.0 + f64::exp(-z));
    let agree = by_box(&inputs[0].box3d).ok_or("missing car")?;
    let want = (sig(2.5 / 1.5) * sig(1.2 / 2.0) / 0.7).min(1.0);
    ensure!(
        agree.class == "car" && agree.score == want,
        "agreement {} {} vs {want}",
        agree.class,
        agree.score
    );
    let dis = by_box(&inputs[1].box3d).ok_or("missing truck")?;
    ensure!(
        dis.class == "car" && dis.score == sig(0.8 / 1.5),
        "disagreement {} {}",
        dis.class,
        dis.score
    );
    let dis2 = by_box(&inputs[2].box3d).ok_or("missing adult")?;
    ensure!(
        dis2.class == "child" && dis2.score == sig(-1.0),
        "disagreement {} {}",
        dis2.class,
        dis2.score
    );
    for d in &inputs[3..] {
        let o = by_box(&d.box3d).ok_or("missing unmatched")?;
        let p = sig(d.logit.unwrap() / lt.temperature(&d.class));
        ensure!(
            o.class == d.class && o.score == 0.4 * d.score,
            "unmatched {} {} vs {}",
            o.class,
            o.score,
            p
        );
    }
    Ok("w = 0.4 without images, RGB-only boxes dropped, LiDAR geometry, RGB class/score on disagreement".into())
}

fn calibration_invariance() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
    for trial in 0..200 {
        let n = rng.random_range(2..60);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let tau = f64::exp(rng.random_range((0.2f64).ln()..(5.0f64).ln()));
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|a, b| v[*b].total_cmp(&v[*a]).then(a.cmp(b)));
            idx
        };
        let cal: Vec<f64> = logits
            .iter()
            .map(|l| fusion::calibrate_score(*l, tau).unwrap())
            .collect();
        ensure!(
            order(&cal) == order(&logits),
            "trial {trial}: argsort changed at tau {tau}"
        );
    }

    let text = std::fs::read_to_string(scenario_path()).map_err(|e| e.to_string())?;
    let base: ScenarioConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let grid = fusion::default_temperature_grid();
    let prior_grid = fusion::default_prior_grid();
    let cfg = FusionConfig::default();
    let opts = EvalOptions::default();
    let mut gains = Vec::new();
    for k in 0..100u64 {
        let mut c = base.clone();
        c.seed = 10_000 + k;
        c.n_frames = 6;
        let s = Scenario::from_config(c).map_err(|e| e.to_string())?;
        let v = s.simulate();
        let tax = &s.taxonomy;
        let neutral = CalibrationTable::neutral("n", tax);

        let single = fusion::tune_temperatures_greedy(&v.lidar, &v.gt, tax, &grid, "lidar")
            .map_err(|e| e.to_string())?;
        let before = eval::map(&v.lidar, &v.gt, tax, &opts).unwrap().map(0);
        let after = eval::map(
            &fusion::apply_temperatures(&v.lidar, &single),
            &v.gt,
            tax,
            &opts,
        )
        .unwrap()
        .map(0);
        ensure!(
            after.unwrap_or(0.0) >= before.unwrap_or(0.0),
            "set {k}: single-model {after:?} < {before:?}"
        );

        let tuner = FusionTuner::new(&v.lidar, &v.rgb2d, &s.rig, &v.gt, tax, &cfg)
            .map_err(|e| e.to_string())?;
        let m0 = tuner.fused_map(&neutral, &neutral).unwrap();
        let lt = tuner
            .tune_temperatures(FusedModel::Lidar, &neutral, &neutral, &grid)
            .unwrap();
        let rt = tuner
            .tune_temperatures(FusedModel::Rgb, &lt, &neutral, &grid)
            .unwrap();
        let rt = tuner.tune_priors(&lt, &rt, &prior_grid).unwrap();
        let m1 = tuner.fused_map(&lt, &rt).unwrap();
        ensure!(m1 >= m0, "set {k}: fused {m1} < {m0}");
        gains.push(m1 - m0);
    }
    let dt = t0.elapsed();
    ensure!(dt < Duration::from_secs(60), "took {dt:?}");
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    Ok(format!("argsort kept on 200 sets; 100 validation sets never lost mAP (mean fused gain {mean_gain:+.4}) in {:.1}s", dt.as_secs_f64()))
}

// -- committed scenario ------------------------------------------------------

struct Committed {
    scenario: Scenario,
    test: SyntheticData,
    lidar_table: CalibrationTable,
    rgb_table: CalibrationTable,
    tuning: Duration,
}

fn committed() -> &'static Committed {
    static CELL: OnceLock<Committed> = OnceLock::new();
    CELL.get_or_init(|| {
        let scenario = Scenario::load(scenario_path()).expect("committed scenario");
        let test = scenario.simulate();
        let t0 = Instant::now();
        let mut vc = scenario.config.clone();
        vc.seed += 1;
        let val = Scenario::from_config(vc).unwrap().simulate();
        let tax = &scenario.taxonomy;
        let cfg = FusionConfig::default();
        let neutral = CalibrationTable::neutral("neutral", tax);
        let grid = fusion::default_temperature_grid();
        let tuner =
            FusionTuner::new(&val.lidar, &val.rgb2d, &scenario.rig, &val.gt, tax, &cfg).unwrap();
        let mut lidar_table = tuner
            .tune_temperatures(FusedModel::Lidar, &neutral, &neutral, &grid)
            .unwrap();
        lidar_table.model_id = "lidar".into();
        let rgb_table = tuner
            .tune_temperatures(FusedModel::Rgb, &lidar_table, &neutral, &grid)
            .unwrap();
        let mut rgb_table = tuner
            .tune_priors(&lidar_table, &rgb_table, &fusion::default_prior_grid())
            .unwrap();
        rgb_table.model_id = "rgb".into();
        Committed {
            scenario,
            test,
            lidar_table,
            rgb_table,
            tuning: t0.elapsed(),
        }
    })
}

fn fused_with(rig: &CameraRig) -> DetectionSet {
    let c = committed();
    fusion::mmlf_fuse(
        &c.test.lidar,
        &c.test.rgb2d,
        rig,
        &c.lidar_table,
        &c.rgb_table,
        &FusionConfig::default(),
    )
    .unwrap()
}

/// Group mAPs and overall mAP from the brute-force oracle.
fn oracle_groups(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tax: &Taxonomy,
) -> BTreeMap<String, f64> {
    let frames = point_frames(dets, gts);
    let mut per_group: BTreeMap<CardinalityGroup, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for c in tax.fine_classes() {
        let aps: Option<Vec<f64>> = eval::DEFAULT_THRESHOLDS
            .iter()
            .map(|t| oracle::ap_center_distance(&frames, c, &[], *t, Integration::AllPoint))
            .collect();
        if let Some(aps) = aps {
            let m = aps.iter().sum::<f64>() / aps.len() as f64;
            per_group
                .entry(tax.group_of(c).unwrap())
                .or_default()
                .push(m);
            all.push(m);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out: BTreeMap<String, f64> = per_group
        .iter()
        .map(|(g, v)| (g.to_string(), mean(v)))
        .collect();
    out.insert("mAP".into(), mean(&all));
    out
}

fn library_groups(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tax: &Taxonomy,
) -> BTreeMap<String, f64> {
    let r = eval::map(dets, gts, tax, &EvalOptions::default()).unwrap();
    let mut out: BTreeMap<String, f64> = CardinalityGroup::ALL
        .iter()
        .filter_map(|g| r.group_map(0, *g).map(|m| (g.to_string(), m)))
        .collect();
    out.insert("mAP".into(), r.map(0).unwrap());
    out
}

fn directional_reproduction() -> Outcome {
    let t0 = Instant::now();
    let c = committed();
    let tax = &c.scenario.taxonomy;
    let gts = &c.test.gt;
    let fused = fused_with(&c.scenario.rig);
    let lidar = library_groups(&c.test.lidar, gts, tax);
    let mmlf = library_groups(&fused, gts, tax);
    for (name, lib, dets) in [("lidar", &lidar, &c.test.lidar), ("mmlf", &mmlf, &fused)] {
        let orc = oracle_groups(dets, gts, tax);
        ensure!(orc.keys().eq(lib.keys()), "{name}: group sets differ");
        for (k, v) in &orc {
            ensure!(
                (lib[k] - v).abs() <= TOL,
                "{name} {k}: library {} vs oracle {v}",
                lib[k]
            );
        }
    }

    let current = json!({
        "scenario": "long_tail.json",
        "seed": c.scenario.config.seed,
        "n_frames": c.scenario.config.n_frames,
        "validation_seed": c.scenario.config.seed + 1,
        "lidar_only": lidar,
        "mmlf": mmlf,
    });
    if std::env::var_os("LT3D_WRITE_BASELINE").is_some() {
        std::fs::write(
            baseline_path(),
            serde_json::to_string_pretty(&current).unwrap() + "\n",
        )
        .map_err(|e| e.to_string())?;
    }
    let committed_text =
        std::fs::read_to_string(baseline_path()).map_err(|e| format!("baseline: {e}"))?;
    let committed_json: serde_json::Value =
        serde_json::from_str(&committed_text).map_err(|e| e.to_string())?;
    for run in ["lidar_only", "mmlf"] {
        for (k, v) in current[run].as_object().unwrap() {
            let want = committed_json[run][k]
                .as_f64()
                .ok_or(format!("baseline lacks {run}.{k}"))?;
            ensure!(
                (v.as_f64().unwrap() - want).abs() <= TOL,
                "{run}.{k}: {v} vs committed {want}"
            );
        }
    }

    let few_gain = mmlf["Few"] - lidar["Few"];
    let many_drop = lidar["Many"] - mmlf["Many"];
    let dt = t0.elapsed() + c.tuning;
    ensure!(few_gain >= 0.10, "Few gain {few_gain:.4}");
    ensure!(many_drop < 0.02, "Many drop {many_drop:.4}");
    ensure!(dt < Duration::from_secs(120), "took {dt:?}");
    Ok(format!(
        "Few {:.4} -> {:.4} ({:+.1} pts), Many {:.4} -> {:.4} ({:+.1} pts), mAP {:.4} -> {:.4}; oracle and baseline agree; {:.1}s",
        lidar["Few"], mmlf["Few"], 100.0 * few_gain, lidar["Many"], mmlf["Many"], -100.0 * many_drop, lidar["mAP"], mmlf["mAP"], dt.as_secs_f64()
    ))
}

fn mmf_reproduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0007);
    let classes = ["car", "adult", "barrier"];
    let mut lidar = DetectionSet::new();
    let mut rgb3d = DetectionSet::new();
    for _ in 0..60 {
        let c = classes[rng.random_range(0..3)];
        lidar.push(lidar_det(
            "f",
            c,
            rng.random(),
            unit_box(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)),
        ));
    }
    for _ in 0..20 {
        let c = classes[rng.random_range(0..3)];
        rgb3d.push(lidar_det(
            "f",
            c,
            rng.random(),
            unit_box(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)),
        ));
    }
    // exactly on the radius, just outside, and a near miss of another class
    lidar.push(lidar_det("f", "car", 0.5, unit_box(40.0, 0.0)));
    rgb3d.push(lidar_det("f", "car", 0.5, unit_box(44.0, 0.0)));
    lidar.push(lidar_det("f", "car", 0.5, unit_box(40.0, 10.0)));
    rgb3d.push(lidar_det("f", "car", 0.5, unit_box(44.000001, 10.0)));
    lidar.push(lidar_det("f", "adult", 0.5, unit_box(40.0, 20.0)));
    rgb3d.push(lidar_det("f", "car", 0.5, unit_box(40.5, 20.0)));

    let pts = |s: &DetectionSet| -> Vec<PointDet> {
        s.iter()
            .map(|d| PointDet {
                class: d.class.clone(),
                score: d.score,
                x: d.box3d.center.x,
                y: d.box3d.center.y,
            })
            .collect()
    };
    let (lp, rp) = (pts(&lidar), pts(&rgb3d));
    let mut cases = 0;
    for radius in [0.5, 1.0, 2.0, 4.0, 8.0] {
        for class_aware in [true, false] {
            let cfg = FusionConfig {
                mmf_radius_m: radius,
                mmf_class_aware: class_aware,
                ..FusionConfig::default()
            };
            let kept = fusion::mmf_filter(&lidar, &rgb3d, &cfg);
            let keep = oracle::mmf_keep(&lp, &rp, radius, class_aware);
            let want: Vec<&Detection3D> = lidar
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(d, _)| d)
                .collect();
            let got: Vec<&Detection3D> = kept.iter().collect();
            ensure!(
                got == want,
                "radius {radius} class_aware {class_aware}: {} kept vs oracle {}",
                got.len(),
                want.len()
            );
            cases += 1;
        }
    }
    let default = fusion::mmf_filter(&lidar, &rgb3d, &FusionConfig::default());
    let boundary: Vec<f64> = default
        .iter()
        .filter(|d| d.box3d.center.x == 40.0)
        .map(|d| d.box3d.center.y)
        .collect();
    ensure!(
        boundary == [0.0],
        "boundary cases at 4 m: kept {boundary:?}"
    );
    Ok(format!(
        "{cases} radius/class settings equal to the pairwise oracle, 4 m boundary inclusive"
    ))
}

fn confusion_identity() -> Outcome {
    let text = std::fs::read_to_string(scenario_path()).map_err(|e| e.to_string())?;
    let mut c: ScenarioConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    c.lidar.confusion.clear();
    c.n_frames = 600;
    let s = Scenario::from_config(c).map_err(|e| e.to_string())?;
    let gt = s.generate_scene();
    let dets = s.simulate_lidar_detector(&gt);
    let mut pairs = 0u64;
    let mut worst = 0.0f64;
    for sup in s.taxonomy.superclasses() {
        let cm =
            eval::confusion_matrix(&dets, &gt, &s.taxonomy, &sup.name, eval::CONFUSION_DISTANCE)
                .map_err(|e| e.to_string())?;
        pairs += cm.matched_pairs();
        for (i, row) in cm.rates.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((r - want).abs());
                ensure!(
                    (r - want).abs() <= 0.02,
                    "{} row {} col {}: {r}",
                    sup.name,
                    cm.classes[i],
                    cm.classes[j]
                );
            }
        }
    }
    ensure!(pairs >= 5000, "only {pairs} matched pairs");
    Ok(format!(
        "{pairs} matched pairs, largest deviation {worst:.4}"
    ))
}

fn round_trip_and_determinism() -> Outcome {
    let c = committed();
    let fused = fused_with(&c.scenario.rig);
    fn rt<T: lt3d::Record + PartialEq + std::fmt::Debug>(
        name: &str,
        s: &lt3d::RecordSet<T>,
        dir: &Path,
    ) -> Result<(), String> {
        let path = dir.join(format!("{name}.jsonl"));
        save_records(s, &path).map_err(|e| e.to_string())?;
        let back = load_records::<T>(&path).map_err(|e| e.to_string())?;
        ensure!(&back == s, "{name}: load(save(x)) != x");
        ensure!(
            back.to_jsonl() == s.to_jsonl(),
            "{name}: text differs after reload"
        );
        Ok(())
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    rt("gt", &c.test.gt, dir.path())?;
    rt("gt2d", &c.test.gt2d, dir.path())?;
    rt("lidar", &c.test.lidar, dir.path())?;
    rt("rgb2d", &c.test.rgb2d, dir.path())?;
    // fused scores are not quantized in memory; the file form is the fixed point
    let path = dir.path().join("fused.jsonl");
    save_records(&fused, &path).map_err(|e| e.to_string())?;
    let back: DetectionSet = load_records(&path).map_err(|e| e.to_string())?;
    ensure!(
        back.to_jsonl() == fused.to_jsonl(),
        "fused: text differs after reload"
    );
    rt("fused-reloaded", &back, dir.path())?;
    for (a, b) in back.iter().zip(fused.iter()) {
        ensure!(
            a.box3d == b.box3d
                && a.class == b.class
                && (a.score - b.score).abs() <= 5e-9 * b.score.max(1e-300),
            "fused record changed"
        );
    }
    for t in [&c.lidar_table, &c.rgb_table] {
        ensure!(
            &CalibrationTable::from_json_str(&t.to_json_string(), "t").unwrap() == t,
            "calibration table"
        );
    }
    ensure!(
        CameraRig::from_json_str(&c.scenario.rig.to_json_string(), "r").unwrap() == c.scenario.rig,
        "rig"
    );
    let tax = &c.scenario.taxonomy;
    ensure!(
        &Taxonomy::from_json_str(&tax.to_json_string(), "t").unwrap() == tax,
        "taxonomy"
    );
    let cfg = FusionConfig::default();
    ensure!(
        FusionConfig::from_json_str(&cfg.to_json_string(), "c").unwrap() == cfg,
        "fusion config"
    );
    let report =
        eval::map_hierarchical(&fused, &c.test.gt, tax, &EvalOptions::hierarchical()).unwrap();
    ensure!(
        serde_json::from_str::<lt3d::EvalReport>(&report.to_json()).unwrap() == report,
        "eval report"
    );

    let commands = cli_determinism(dir.path())?;
    Ok(format!("5 record sets and 5 documents round-trip; {commands} CLI cases byte-stable across runs and thread counts"))
}

/// Runs each subcommand twice (plus once single-threaded) and compares
/// every output byte for byte.
fn cli_determinism(root: &Path) -> Result<usize, String> {
    let bin = env!("CARGO_BIN_EXE_lt3d");
    let scenario = scenario_path();
    let run = |args: &[String], threads: Option<&str>| -> Result<(), String> {
        let mut cmd = Command::new(bin);
        cmd.args(args);
        if let Some(t) = threads {
            cmd.env("LT3D_THREADS", t);
        }
        let out = cmd.output().map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "lt3d {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(())
    };
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = root.join("data");
    let synth = |dir: &Path| {
        vec![
            "synth".into(),
            "--scenario".into(),
            s(&scenario),
            "--frames".into(),
            "40".into(),
            "--out-dir".into(),
            s(dir),
        ]
    };
    run(&synth(&data), None)?;
    let again = root.join("data-again");
    run(&synth(&again), Some("1"))?;
    for f in [
        "gt.jsonl",
        "gt2d.jsonl",
        "lidar.jsonl",
        "rgb2d.jsonl",
        "cameras.json",
        "taxonomy.json",
    ] {
        ensure!(
            std::fs::read(data.join(f)).ok() == std::fs::read(again.join(f)).ok(),
            "synth {f} differs"
        );
    }

    let d = |n: &str| s(&data.join(n));
    let empty = root.join("empty.jsonl");
    std::fs::write(&empty, "").map_err(|e| e.to_string())?;
    let calib_lidar = root.join("fixed-calib-lidar.json");
    std::fs::write(&calib_lidar, committed().lidar_table.to_json_string())
        .map_err(|e| e.to_string())?;
    let calib_rgb = root.join("fixed-calib-rgb.json");
    std::fs::write(&calib_rgb, committed().rgb_table.to_json_string())
        .map_err(|e| e.to_string())?;
    let fused_input = root.join("fused-input.jsonl");
    run(
        &[
            "fuse",
            "--lidar",
            &d("lidar.jsonl"),
            "--rgb2d",
            &d("rgb2d.jsonl"),
            "--cameras",
            &d("cameras.json"),
            "--out",
            &s(&fused_input),
        ]
        .map(String::from),
        None,
    )?;
    let args = |v: &[&str]| -> Vec<String> { v.iter().map(|x| x.to_string()).collect() };
    let tax = d("taxonomy.json");

    // (name, args without --out, output suffixes appended to the --out value)
    let cases: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "eval",
            args(&[
                "eval",
                "--gt",
                &d("gt.jsonl"),
                "--det",
                &s(&fused_input),
                "--taxonomy",
                &tax,
                "--lca",
                "0,1,2",
                "--pr-curves",
            ]),
            vec![".json", ".csv", ".pr.csv"],
        ),
        (
            "eval-range",
            args(&[
                "eval",
                "--gt",
                &d("gt.jsonl"),
                "--det",
                &d("lidar.jsonl"),
                "--taxonomy",
                &tax,
                "--range",
                "0,30",
                "--nuscenes-clip",
            ]),
            vec![".json", ".csv"],
        ),
        (
            "eval2d",
            args(&[
                "eval2d",
                "--gt2d",
                &d("gt2d.jsonl"),
                "--det2d",
                &d("rgb2d.jsonl"),
                "--taxonomy",
                &tax,
            ]),
            vec![".json", ".csv"],
        ),
        (
            "fuse",
            args(&[
                "fuse",
                "--lidar",
                &d("lidar.jsonl"),
                "--rgb2d",
                &d("rgb2d.jsonl"),
                "--cameras",
                &d("cameras.json"),
                "--calib-lidar",
                &s(&calib_lidar),
                "--calib-rgb",
                &s(&calib_rgb),
                "--nms",
            ]),
            vec![""],
        ),
        (
            "fuse-empty",
            args(&[
                "fuse",
                "--lidar",
                &d("lidar.jsonl"),
                "--rgb2d",
                &s(&empty),
                "--cameras",
                &d("cameras.json"),
            ]),
            vec![""],
        ),
        (
            "filter",
            args(&[
                "filter",
                "--lidar",
                &d("lidar.jsonl"),
                "--rgb3d",
                &s(&fused_input),
            ]),
            vec![""],
        ),
        (
            "calibrate-lidar",
            args(&[
                "calibrate",
                "--model",
                "lidar",
                "--val-gt",
                &d("gt.jsonl"),
                "--val-det",
                &d("lidar.jsonl"),
                "--taxonomy",
                &tax,
                "--val-rgb2d",
                &d("rgb2d.jsonl"),
                "--cameras",
                &d("cameras.json"),
            ]),
            vec![""],
        ),
        (
            "calibrate-rgb",
            args(&[
                "calibrate",
                "--model",
                "rgb",
                "--val-gt",
                &d("gt.jsonl"),
                "--val-det",
                &d("rgb2d.jsonl"),
                "--taxonomy",
                &tax,
                "--val-lidar",
                &d("lidar.jsonl"),
                "--cameras",
                &d("cameras.json"),
                "--calib-other",
                &s(&calib_lidar),
            ]),
            vec![""],
        ),
        (
            "confusion",
            args(&[
                "confusion",
                "--gt",
                &d("gt.jsonl"),
                "--det",
                &d("lidar.jsonl"),
                "--taxonomy",
                &tax,
                "--superclass",
                "pedestrian",
            ]),
            vec![""],
        ),
        (
            "recall",
            args(&[
                "recall",
                "--gt",
                &d("gt.jsonl"),
                "--det",
                &d("lidar.jsonl"),
                "--taxonomy",
                &tax,
                "--level",
                "coarse",
                "--range",
                "0,40",
            ]),
            vec![""],
        ),
        (
            "project",
            args(&[
                "project",
                "--det",
                &d("lidar.jsonl"),
                "--cameras",
                &d("cameras.json"),
            ]),
            vec![""],
        ),
    ];
    let mut n = 1;
    for (name, base, suffixes) in cases {
        let outs: Vec<PathBuf> = ["a", "b", "t1"]
            .iter()
            .map(|r| root.join(format!("{name}-{r}")))
            .collect();
        for (out, threads) in outs.iter().zip([None, None, Some("1")]) {
            let mut a = base.clone();
            a.extend(["--out".to_string(), s(out)]);
            run(&a, threads)?;
        }
        for suffix in suffixes {
            let read = |p: &PathBuf| {
                std::fs::read(format!("{}{suffix}", p.display()))
                    .map_err(|e| format!("{name}{suffix}: {e}"))
            };
            let first = read(&outs[0])?;
            ensure!(
                !first.is_empty() || name == "filter",
                "{name}{suffix} is empty"
            );
            for other in &outs[1..] {
                ensure!(
                    read(other)? == first,
                    "{name}{suffix}: bytes differ between runs"
                );
            }
        }
        n += 1;
    }
    Ok(n)
}

fn calibration_noise_direction() -> Outcome {
    let c = committed();
    let tax = &c.scenario.taxonomy;
    let opts = EvalOptions::default();
    let score = |rig: &CameraRig| {
        eval::map(&fused_with(rig), &c.test.gt, tax, &opts)
            .unwrap()
            .map(0)
            .unwrap()
    };
    let clean = score(&c.scenario.rig);
    let perturbed = |sigma_t: f64, sigma_r: f64, seed: u64| {
        let mut rig = c.scenario.rig.clone();
        for (i, cam) in rig.cameras.iter_mut().enumerate() {
            cam.pose =
                perturb_extrinsics(&cam.pose, sigma_t, sigma_r, seed * 100 + i as u64).unwrap();
        }
        score(&rig)
    };
    let seeds = 0..4u64;
    let n = seeds.clone().count() as f64;
    let trans = seeds
        .clone()
        .map(|s| clean - perturbed(0.02, 0.0, s))
        .sum::<f64>()
        / n;
    let rot = seeds
        .map(|s| clean - perturbed(0.0, 2f64.to_radians(), s))
        .sum::<f64>()
        / n;
    ensure!(
        rot > trans,
        "rotation drop {rot:.4} <= translation drop {trans:.4}"
    );
    Ok(format!(
        "clean {clean:.4}; mean drop: translation 0.02 m {:.2} pts, rotation 2 deg {:.2} pts",
        100.0 * trans,
        100.0 * rot
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 oracle equivalence (AP)", oracle_equivalence),
        ("2 LCA monotonicity", lca_monotonicity),
        ("3 fusion algebra", fusion_algebra),
        ("4 MMLF contract", mmlf_contract),
        ("5 calibration invariance", calibration_invariance),
        (
            "6 long-tail directional reproduction",
            directional_reproduction,
        ),
        ("7 MMF pairwise oracle", mmf_reproduction),
        ("8 confusion-matrix identity", confusion_identity),
        ("9 round-trip and determinism", round_trip_and_determinism),
        (
            "10 calibration-noise direction",
            calibration_noise_direction,
        ),
    ];
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why} ({secs:.2}s)");
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
