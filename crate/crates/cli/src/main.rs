//! `lt3d`: batch front end for evaluation, fusion, calibration and
//! simulation. Exit status 0 on success, 1 on invalid input or runtime
//! failure, 2 on bad usage.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lt3d::detections::{load_nuscenes_results, load_records, save_records, Record, RecordSet};
use lt3d::eval::{self, ApMode, DistanceRange, EvalOptions, GtFilter, RecallLevel, ZeroGtPolicy};
use lt3d::fusion::{self, CalibrationTable, FusedModel, FusionConfig, FusionTuner};
use lt3d::geometry::project_to_rig;
use lt3d::{
    CameraRig, Detection2D, Detection2DSet, DetectionSet, GroundTruth2DSet, GroundTruthSet,
    Scenario, Taxonomy, Visibility,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lt3d",
    version,
    about = "Long-tailed 3D detection: late fusion and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Center-distance AP / mAP report (JSON + CSV).
    Eval(EvalArgs),
    /// Image-plane AP report for 2D detections (JSON + CSV).
    Eval2d(Eval2dArgs),
    /// Late fusion of LiDAR 3D and RGB 2D detections.
    Fuse(FuseArgs),
    /// Keep LiDAR detections corroborated by nearby RGB 3D detections.
    Filter(FilterArgs),
    /// Tune a calibration table on validation data.
    Calibrate(CalibrateArgs),
    /// Confusion matrix among the fine classes of one superclass.
    Confusion(ConfusionArgs),
    /// Recall per fine class or superclass.
    Recall(RecallArgs),
    /// Generate a synthetic scene and both detectors' outputs.
    Synth(SynthArgs),
    /// Per-camera 2D hulls of 3D detections.
    Project(ProjectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DetFormat {
    /// Newline-delimited det3d records.
    Native,
    /// nuScenes-style results JSON.
    Nuscenes,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long, value_enum, default_value = "native")]
    det_format: DetFormat,
    /// Center-distance thresholds in meters.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    thresholds: Vec<f64>,
    /// LCA levels to report.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    lca: Vec<u8>,
    /// Restrict to objects with ego distance in [a, b), given as `a,b`.
    #[arg(long, value_parser = parse_range)]
    range: Option<DistanceRange>,
    /// Integrate only above recall 0.1 and precision 0.1.
    #[arg(long)]
    nuscenes_clip: bool,
    /// Score classes without ground truth as 0 instead of excluding them.
    #[arg(long)]
    zero_missing: bool,
    /// Also write PR curves to `<out>.pr.csv`.
    #[arg(long)]
    pr_curves: bool,
    /// Record the current Unix time in the report.
    #[arg(long)]
    stamp: bool,
    /// Output prefix; writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval2dArgs {
    #[arg(long)]
    gt2d: PathBuf,
    #[arg(long)]
    det2d: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    /// IoU thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    lca: Vec<u8>,
    #[arg(long)]
    nuscenes_clip: bool,
    #[arg(long)]
    zero_missing: bool,
    #[arg(long)]
    stamp: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides for individual fusion settings.
#[derive(Args)]
struct FusionFlags {
    /// Fusion settings JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Score multiplier for LiDAR detections without an RGB match.
    #[arg(long)]
    unmatched_weight: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// MMF accepts RGB detections of any class.
    #[arg(long)]
    class_agnostic: bool,
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Do not clip fused scores to [0, 1].
    #[arg(long)]
    no_clip: bool,
}

impl FusionFlags {
    fn resolve(&self) -> Result<FusionConfig> {
        let mut cfg = match &self.config {
            Some(p) => FusionConfig::load(p)?,
            None => FusionConfig::default(),
        };
        if let Some(v) = self.iou_threshold {
            cfg.iou_threshold = v;
        }
        if let Some(v) = self.unmatched_weight {
            cfg.unmatched_lidar_weight = v;
        }
        if let Some(v) = self.radius {
            cfg.mmf_radius_m = v;
        }
        if self.class_agnostic {
            cfg.mmf_class_aware = false;
        }
        if let Some(v) = self.nms_iou {
            cfg.nms_iou_bev = v;
        }
        if self.no_clip {
            cfg.score_clip = false;
        }
        cfg.validate().context("fusion settings")?;
        log::info!("fusion config: {}", serde_json::to_string(&cfg)?);
        Ok(cfg)
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    lidar: PathBuf,
    #[arg(long)]
    rgb2d: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    /// LiDAR calibration table; neutral when omitted.
    #[arg(long)]
    calib_lidar: Option<PathBuf>,
    /// RGB calibration table (temperatures and class priors); neutral when omitted.
    #[arg(long)]
    calib_rgb: Option<PathBuf>,
    #[command(flatten)]
    fusion: FusionFlags,
    /// Apply within-class NMS to the fused output.
    #[arg(long)]
    nms: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    lidar: PathBuf,
    #[arg(long)]
    rgb3d: PathBuf,
    #[command(flatten)]
    fusion: FusionFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Lidar,
    Rgb,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    val_gt: PathBuf,
    /// Validation detections of the model being tuned (det3d for lidar,
    /// det2d for rgb).
    #[arg(long)]
    val_det: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    /// Validation LiDAR detections, to tune the RGB model through fusion.
    #[arg(long)]
    val_lidar: Option<PathBuf>,
    /// Validation RGB detections, to tune the LiDAR model through fusion.
    #[arg(long)]
    val_rgb2d: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Table of the other model, held fixed during fused tuning.
    #[arg(long)]
    calib_other: Option<PathBuf>,
    #[command(flatten)]
    fusion: FusionFlags,
    /// Temperature candidates; 15 log-spaced values in [0.25, 4] by default.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Prior candidates; 11 log-spaced values in [0.2, 5] by default.
    #[arg(long, value_delimiter = ',')]
    prior_grid: Option<Vec<f64>>,
    /// Skip prior tuning for the RGB model.
    #[arg(long)]
    no_priors: bool,
    /// Model id recorded in the table; defaults to the model name.
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfusionArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    superclass: String,
    #[arg(long, default_value_t = eval::CONFUSION_DISTANCE)]
    distance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fine,
    Coarse,
}

#[derive(Args)]
struct RecallArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "fine")]
    level: LevelArg,
    /// Only count ground truth in this visibility bucket (0-40, 40-60, 60-80, 80-100).
    #[arg(long)]
    visibility: Option<String>,
    /// Ego-distance interval `a,b`.
    #[arg(long, value_parser = parse_range)]
    range: Option<DistanceRange>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Directory for gt, gt2d, lidar and rgb2d JSONL plus cameras.json and
    /// taxonomy.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    Ok(Taxonomy::load(path)?)
}

fn load_bound<T: Record>(path: &Path, tax: &Taxonomy) -> Result<RecordSet<T>> {
    let set: RecordSet<T> = load_records(path)?;
    set.bind(tax)
        .with_context(|| format!("{}", path.display()))?;
    Ok(set)
}

fn parse_range(s: &str) -> std::result::Result<DistanceRange, String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    DistanceRange::new(num(a)?, num(b)?).map_err(|e| e.to_string())
}

fn eval_options(
    thresholds: &[f64],
    lca: &[u8],
    clip: bool,
    zero_missing: bool,
    curves: bool,
) -> EvalOptions {
    EvalOptions {
        thresholds: thresholds.to_vec(),
        lca_levels: lca.to_vec(),
        ap_mode: if clip {
            ApMode::NuScenesClipped
        } else {
            ApMode::AllPoint
        },
        zero_gt: if zero_missing {
            ZeroGtPolicy::Zero
        } else {
            ZeroGtPolicy::Exclude
        },
        keep_curves: curves,
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_report(mut report: eval::EvalReport, out: &Path, stamp: bool, curves: bool) -> Result<()> {
    if stamp {
        report.config.generated_at = Some(unix_now());
    }
    write_text(&with_suffix(out, ".json"), &(report.to_json() + "\n"))?;
    write_text(&with_suffix(out, ".csv"), &report.to_csv())?;
    if curves {
        let mut all = String::new();
        for c in &report.classes {
            let body = report.pr_curves_csv(&c.class).unwrap_or_default();
            let mut lines = body.lines();
            if all.is_empty() {
                all.push_str("class,");
                all.push_str(lines.next().unwrap_or_default());
                all.push('\n');
            } else {
                lines.next();
            }
            for l in lines {
                all.push_str(&c.class);
                all.push(',');
                all.push_str(l);
                all.push('\n');
            }
        }
        write_text(&with_suffix(out, ".pr.csv"), &all)?;
    }
    for s in &report.summary {
        match s.map {
            Some(m) => log::info!("LCA {}: mAP {:.4}", s.lca, m),
            None => log::info!("LCA {}: mAP undefined (no ground truth)", s.lca),
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let gts: GroundTruthSet = load_bound(&a.gt, &tax)?;
    let dets: DetectionSet = match a.det_format {
        DetFormat::Native => load_bound(&a.det, &tax)?,
        DetFormat::Nuscenes => {
            let d = load_nuscenes_results(&a.det)?;
            d.bind(&tax)
                .with_context(|| format!("{}", a.det.display()))?;
            d
        }
    };
    let opts = eval_options(
        &a.thresholds,
        &a.lca,
        a.nuscenes_clip,
        a.zero_missing,
        a.pr_curves,
    );
    let report = match a.range {
        Some(r) => eval::range_filtered_eval(&dets, &gts, &tax, r, &opts),
        None => eval::evaluate(&dets, &gts, &tax, &opts),
    }
    .context("evaluation")?;
    write_report(report, &a.out, a.stamp, a.pr_curves)
}

fn cmd_eval2d(a: &Eval2dArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let gts: GroundTruth2DSet = load_bound(&a.gt2d, &tax)?;
    let dets: Detection2DSet = load_bound(&a.det2d, &tax)?;
    let opts = eval_options(
        &a.thresholds,
        &a.lca,
        a.nuscenes_clip,
        a.zero_missing,
        false,
    );
    let report = eval::eval_2d(&dets, &gts, &tax, &opts).context("evaluation")?;
    write_report(report, &a.out, a.stamp, false)
}

fn load_table(path: &Option<PathBuf>, model_id: &str) -> Result<CalibrationTable> {
    match path {
        Some(p) => Ok(CalibrationTable::load(p)?),
        None => Ok(CalibrationTable::new(model_id)),
    }
}

fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let cfg = a.fusion.resolve()?;
    let lidar: DetectionSet = load_records(&a.lidar)?;
    let rgb: Detection2DSet = load_records(&a.rgb2d)?;
    let rig = CameraRig::load(&a.cameras)?;
    let lt = load_table(&a.calib_lidar, "lidar")?;
    let rt = load_table(&a.calib_rgb, "rgb")?;
    let mut fused = fusion::mmlf_fuse(&lidar, &rgb, &rig, &lt, &rt, &cfg)?;
    if a.nms {
        fused = fusion::nms_within_class(&fused, cfg.nms_iou_bev);
    }
    log::info!(
        "fused {} LiDAR and {} RGB detections into {}",
        lidar.len(),
        rgb.len(),
        fused.len()
    );
    save_records(&fused, &a.out)?;
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> Result<()> {
    let cfg = a.fusion.resolve()?;
    let lidar: DetectionSet = load_records(&a.lidar)?;
    let rgb: DetectionSet = load_records(&a.rgb3d)?;
    let kept = fusion::mmf_filter(&lidar, &rgb, &cfg);
    log::info!("kept {} of {} LiDAR detections", kept.len(), lidar.len());
    save_records(&kept, &a.out)?;
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let gts: GroundTruthSet = load_bound(&a.val_gt, &tax)?;
    let cfg = a.fusion.resolve()?;
    let grid = a
        .grid
        .clone()
        .unwrap_or_else(fusion::default_temperature_grid);
    let prior_grid = a
        .prior_grid
        .clone()
        .unwrap_or_else(fusion::default_prior_grid);
    let model_name = match a.model {
        Model::Lidar => "lidar",
        Model::Rgb => "rgb",
    };
    let model_id = a.model_id.clone().unwrap_or_else(|| model_name.to_owned());
    let rig = a.cameras.as_ref().map(CameraRig::load).transpose()?;

    let table = match a.model {
        Model::Lidar => {
            let dets: DetectionSet = load_bound(&a.val_det, &tax)?;
            match (&a.val_rgb2d, &rig) {
                (Some(rgb_path), Some(rig)) => {
                    let rgb: Detection2DSet = load_bound(rgb_path, &tax)?;
                    let other = load_table(&a.calib_other, "rgb")?;
                    let tuner = FusionTuner::new(&dets, &rgb, rig, &gts, &tax, &cfg)?;
                    let own = CalibrationTable::neutral(model_id.clone(), &tax);
                    tuner.tune_temperatures(FusedModel::Lidar, &own, &other, &grid)?
                }
                (Some(_), None) => bail!("--val-rgb2d requires --cameras"),
                (None, _) => fusion::tune_temperatures_greedy(&dets, &gts, &tax, &grid, &model_id)?,
            }
        }
        Model::Rgb => {
            let dets: Detection2DSet = load_bound(&a.val_det, &tax)?;
            match (&a.val_lidar, &rig) {
                (Some(lidar_path), Some(rig)) => {
                    let lidar: DetectionSet = load_bound(lidar_path, &tax)?;
                    let other = load_table(&a.calib_other, "lidar")?;
                    let tuner = FusionTuner::new(&lidar, &dets, rig, &gts, &tax, &cfg)?;
                    let own = CalibrationTable::neutral(model_id.clone(), &tax);
                    let t = tuner.tune_temperatures(FusedModel::Rgb, &other, &own, &grid)?;
                    if a.no_priors {
                        t
                    } else {
                        tuner.tune_priors(&other, &t, &prior_grid)?
                    }
                }
                (Some(_), None) => bail!("--val-lidar requires --cameras"),
                (None, _) => {
                    log::warn!(
                        "no --val-lidar given: a temperature cannot reorder one model's own detections \
                         within a class, so the table stays neutral"
                    );
                    CalibrationTable::neutral(model_id.clone(), &tax)
                }
            }
        }
    };
    write_text(&a.out, &(table.to_json_string() + "\n"))
}

fn cmd_confusion(a: &ConfusionArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let gts: GroundTruthSet = load_bound(&a.gt, &tax)?;
    let dets: DetectionSet = load_bound(&a.det, &tax)?;
    let cm = eval::confusion_matrix(&dets, &gts, &tax, &a.superclass, a.distance)
        .with_context(|| format!("--superclass {}", a.superclass))?;
    write_text(&a.out, &(serde_json::to_string_pretty(&cm)? + "\n"))
}

fn cmd_recall(a: &RecallArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let gts: GroundTruthSet = load_bound(&a.gt, &tax)?;
    let dets: DetectionSet = load_bound(&a.det, &tax)?;
    let visibility = a
        .visibility
        .as_deref()
        .map(|v| Visibility::parse(v).ok_or_else(|| anyhow!("--visibility: unknown bucket '{v}'")))
        .transpose()?;
    let filter = GtFilter {
        visibility,
        range: a.range,
    };
    let level = match a.level {
        LevelArg::Fine => RecallLevel::Fine,
        LevelArg::Coarse => RecallLevel::Coarse,
    };
    let report = eval::average_recall(&dets, &gts, &tax, a.threshold, level, filter)?;
    write_text(&a.out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if a.seed.is_some() || a.frames.is_some() {
        let mut cfg = scenario.config.clone();
        cfg.seed = a.seed.unwrap_or(cfg.seed);
        cfg.n_frames = a.frames.unwrap_or(cfg.n_frames);
        scenario = Scenario::from_config(cfg)?;
    }
    let data = scenario.simulate();
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_records(&data.gt, dir.join("gt.jsonl"))?;
    save_records(&data.gt2d, dir.join("gt2d.jsonl"))?;
    save_records(&data.lidar, dir.join("lidar.jsonl"))?;
    save_records(&data.rgb2d, dir.join("rgb2d.jsonl"))?;
    write_text(
        &dir.join("cameras.json"),
        &(scenario.rig.to_json_string() + "\n"),
    )?;
    write_text(
        &dir.join("taxonomy.json"),
        &(scenario.taxonomy.to_json_string() + "\n"),
    )?;
    log::info!(
        "{} frames: {} objects, {} LiDAR and {} RGB detections",
        scenario.config.n_frames,
        data.gt.len(),
        data.lidar.len(),
        data.rgb2d.len()
    );
    Ok(())
}

fn cmd_project(a: &ProjectArgs) -> Result<()> {
    let dets: DetectionSet = load_records(&a.det)?;
    let rig = CameraRig::load(&a.cameras)?;
    let mut out = Detection2DSet::new();
    for (id, frame) in dets.frames() {
        out.ensure_frame(id);
        for d in frame {
            for (cam, bbox) in project_to_rig(&d.box3d, &rig) {
                out.push(Detection2D {
                    frame_id: id.to_owned(),
                    camera_id: cam.to_owned(),
                    box2d: bbox,
                    class: d.class.clone(),
                    score: d.score,
                    logit: d.logit,
                });
            }
        }
    }
    save_records(&out, &a.out)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Eval2d(a) => cmd_eval2d(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Confusion(a) => cmd_confusion(a),
        Command::Recall(a) => cmd_recall(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Project(a) => cmd_project(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("LT3D_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) => {
                if !lt3d::par::init_threads(n) && n != 0 {
                    log::debug!("LT3D_THREADS={n} not applied");
                }
            }
            Err(_) => {
                eprintln!("error: LT3D_THREADS must be a non-negative integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // sources already quoted by their parent are skipped
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
