//! Boxes, rigid transforms, pinhole projection and the overlap primitives
//! used by matching, fusion and evaluation.
//!
//! Conventions:
//! - The ego frame is right-handed with +z up. Yaw is measured
//!   counter-clockwise about +z from +x and normalized to (-pi, pi].
//! - Camera frames follow the pinhole convention: +z forward (depth),
//!   +x right, +y down.
//! - A [`Pose`] maps sensor coordinates into the ego frame:
//!   `p_ego = R * p_sensor + t`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// 3D point or direction, meters.
pub type Vec3 = Vector3<f64>;

/// Tolerance used for the SO(3) membership check.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("box dimensions must be positive and finite, got l={length} w={width} h={height}")]
    BadDimensions {
        length: f64,
        width: f64,
        height: f64,
    },
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("rectangle must satisfy x1 < x2 and y1 < y2, got [{x1}, {y1}, {x2}, {y2}]")]
    BadRect { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("rotation is not in SO(3): max |R R^T - I| = {orthogonality:e}, det = {det}")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("noise standard deviations must be non-negative and finite")]
    BadNoise,
    #[error("failed to read camera calibration {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed camera calibration {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("camera calibration {path}: camera '{camera_id}': {reason}")]
    Camera {
        path: String,
        camera_id: String,
        reason: String,
    },
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Oriented 3D cuboid. Only yaw is modelled; boxes are upright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vec3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Builds a validated box. The yaw is wrapped into (-pi, pi].
    pub fn new(
        center: Vec3,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("box center"));
        }
        if !yaw.is_finite() {
            return Err(GeometryError::NonFinite("box yaw"));
        }
        let dims_ok = [length, width, height]
            .iter()
            .all(|d| d.is_finite() && *d > 0.0);
        if !dims_ok {
            return Err(GeometryError::BadDimensions {
                length,
                width,
                height,
            });
        }
        Ok(Self {
            center,
            length,
            width,
            height,
            yaw: normalize_yaw(yaw),
        })
    }

    /// Footprint corners in the ground plane, counter-clockwise starting at
    /// the (+l/2, +w/2) corner.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(lx, ly)| {
            (
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            )
        })
    }

    /// Axis-aligned rectangle enclosing the rotated footprint (meters).
    pub fn bev_aabb(&self) -> Box2D {
        let fp = self.footprint();
        let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
        let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in fp {
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x);
            y2 = y2.max(y);
        }
        Box2D { x1, y1, x2, y2 }
    }

    /// Ground-plane distance of the center from the ego origin.
    pub fn ego_distance(&self) -> f64 {
        self.center.x.hypot(self.center.y)
    }
}

/// Axis-aligned rectangle. Image boxes are in pixels; [`Box3D::bev_aabb`]
/// reuses the type for footprints in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("rectangle"));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(GeometryError::BadRect { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Rigid sensor-to-ego transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let orthogonality = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if orthogonality > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::NotARotation { orthogonality, det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose of a forward-looking camera mounted at `translation` whose
    /// optical axis points along ego yaw `heading`, level with the ground.
    pub fn camera_looking_at_heading(heading: f64, translation: Vec3) -> Self {
        let (s, c) = heading.sin_cos();
        let forward = Vec3::new(c, s, 0.0);
        let right = Vec3::new(s, -c, 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Self {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Maps a point from the sensor frame to the ego frame.
    pub fn sensor_to_ego(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Maps a point from the ego frame to the sensor frame.
    pub fn ego_to_sensor(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Row-major rotation entries, as stored in calibration files.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::BadIntrinsics(msg.to_owned()));
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return bad("principal point must lie inside the image");
        }
        Ok(())
    }

    pub fn project(&self, p_cam: &Vec3) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }
}

/// One calibrated camera of a rig.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

/// Ordered collection of cameras.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    camera_id: String,
    intrinsics: CameraIntrinsics,
    pose: PoseRecord,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RigFile {
    Many(Vec<CameraRecord>),
    One(CameraRecord),
}

impl CameraRig {
    pub fn camera(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    /// Parses a calibration document: either one camera object or an array
    /// of them.
    pub fn from_json_str(text: &str, path: &str) -> Result<Self, GeometryError> {
        let parsed: RigFile =
            serde_json::from_str(text).map_err(|source| GeometryError::Parse {
                path: path.to_owned(),
                source,
            })?;
        let records = match parsed {
            RigFile::Many(v) => v,
            RigFile::One(c) => vec![c],
        };
        let mut cameras: Vec<Camera> = Vec::with_capacity(records.len());
        for rec in records {
            let fail = |reason: String| GeometryError::Camera {
                path: path.to_owned(),
                camera_id: rec.camera_id.clone(),
                reason,
            };
            if cameras.iter().any(|c| c.camera_id == rec.camera_id) {
                return Err(fail("duplicate camera_id".into()));
            }
            rec.intrinsics.validate().map_err(|e| fail(e.to_string()))?;
            let r = Matrix3::from_row_slice(&rec.pose.rotation);
            let t = Vec3::from_column_slice(&rec.pose.translation);
            let pose = Pose::new(r, t).map_err(|e| fail(e.to_string()))?;
            cameras.push(Camera {
                camera_id: rec.camera_id.clone(),
                intrinsics: rec.intrinsics,
                pose,
            });
        }
        Ok(Self { cameras })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_json_str(&text, &display)
    }

    pub fn to_json_string(&self) -> String {
        let records: Vec<CameraRecord> = self
            .cameras
            .iter()
            .map(|c| CameraRecord {
                camera_id: c.camera_id.clone(),
                intrinsics: c.intrinsics,
                pose: PoseRecord {
                    rotation: c.pose.rotation_row_major(),
                    translation: [
                        c.pose.translation.x,
                        c.pose.translation.y,
                        c.pose.translation.z,
                    ],
                },
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("camera records always serialize")
    }

    /// Six cameras at 60 degree spacing, 1600x900 pixels, mounted 1.5 m
    /// above the ground. Covers the full circle with slight overlap.
    pub fn surround_view() -> Self {
        let names = [
            "front",
            "front_left",
            "back_left",
            "back",
            "back_right",
            "front_right",
        ];
        let intrinsics = CameraIntrinsics {
            fx: 1266.0,
            fy: 1266.0,
            cx: 800.0,
            cy: 450.0,
            width: 1600,
            height: 900,
        };
        let cameras = names
            .iter()
            .enumerate()
            .map(|(i, name)| Camera {
                camera_id: (*name).to_owned(),
                intrinsics,
                pose: Pose::camera_looking_at_heading(
                    i as f64 * PI / 3.0,
                    Vec3::new(0.0, 0.0, 1.5),
                ),
            })
            .collect();
        Self { cameras }
    }
}

/// Euclidean distance between box centers in the ground plane; z is ignored.
pub fn bev_center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.center.x - b.center.x).hypot(a.center.y - b.center.y)
}

/// The 8 cuboid corners. Bottom face first, counter-clockwise seen from
/// above starting at the (+l/2, +w/2) corner, then the top face in the same
/// order.
pub fn corners_of_box3d(b: &Box3D) -> [Vec3; 8] {
    let fp = b.footprint();
    let z0 = b.center.z - b.height / 2.0;
    let z1 = b.center.z + b.height / 2.0;
    std::array::from_fn(|i| {
        let (x, y) = fp[i % 4];
        Vec3::new(x, y, if i < 4 { z0 } else { z1 })
    })
}

/// Projects a box into one camera and returns the clipped axis-aligned hull
/// of its visible corners.
///
/// Corners with non-positive depth are dropped. Returns `None` when fewer
/// than two corners lie in front of the camera or the clipped hull is empty.
pub fn project_box3d_to_image(b: &Box3D, cam_pose: &Pose, k: &CameraIntrinsics) -> Option<Box2D> {
    let mut visible = 0usize;
    let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
    let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in corners_of_box3d(b) {
        let p = cam_pose.ego_to_sensor(&corner);
        if p.z <= 0.0 {
            continue;
        }
        visible += 1;
        let (u, v) = k.project(&p);
        x1 = x1.min(u);
        y1 = y1.min(v);
        x2 = x2.max(u);
        y2 = y2.max(v);
    }
    if visible < 2 {
        return None;
    }
    let x1 = x1.max(0.0);
    let y1 = y1.max(0.0);
    let x2 = x2.min(k.width as f64);
    let y2 = y2.min(k.height as f64);
    if x1 < x2 && y1 < y2 {
        Some(Box2D { x1, y1, x2, y2 })
    } else {
        None
    }
}

/// Projects a box into every camera of a rig, returning the non-empty hulls
/// in rig order.
pub fn project_to_rig<'r>(b: &Box3D, rig: &'r CameraRig) -> Vec<(&'r str, Box2D)> {
    rig.cameras
        .iter()
        .filter_map(|c| {
            project_box3d_to_image(b, &c.pose, &c.intrinsics).map(|r| (c.camera_id.as_str(), r))
        })
        .collect()
}

/// Intersection over union of two rectangles; 0 when disjoint.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of the axis-aligned footprints of two boxes in the ground plane.
pub fn bev_aabb_iou(a: &Box3D, b: &Box3D) -> f64 {
    iou_2d(&a.bev_aabb(), &b.bev_aabb())
}

/// Adds seeded Gaussian noise to an extrinsic calibration.
///
/// Each translation component receives N(0, sigma_t). The rotation is
/// composed with a yaw/pitch/roll perturbation whose angles are each
/// N(0, sigma_r), applied in the sensor frame.
pub fn perturb_extrinsics(
    p: &Pose,
    sigma_t: f64,
    sigma_r: f64,
    seed: u64,
) -> Result<Pose, GeometryError> {
    if !(sigma_t.is_finite() && sigma_r.is_finite() && sigma_t >= 0.0 && sigma_r >= 0.0) {
        return Err(GeometryError::BadNoise);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sigma)
                .expect("sigma validated above")
                .sample(&mut rng)
        }
    };
    let dt = Vec3::new(draw(sigma_t), draw(sigma_t), draw(sigma_t));
    let (yaw, pitch, roll) = (draw(sigma_r), draw(sigma_r), draw(sigma_r));

    let translation = p.translation + dt;
    let rotation = if sigma_r == 0.0 {
        p.rotation
    } else {
        let noise = Rotation3::from_euler_angles(roll, pitch, yaw);
        p.rotation * noise.matrix()
    };
    Ok(Pose {
        rotation,
        translation,
    })
}
