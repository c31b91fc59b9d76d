//! Long-tailed 3D detection toolkit: multi-modal late fusion of LiDAR and
//! RGB detections, hierarchical evaluation, and seeded simulators.

pub mod detections;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod matching;
pub mod par;
pub mod synth;
pub mod taxonomy;

pub use detections::{
    Detection2D, Detection2DSet, Detection3D, DetectionSet, GroundTruth2D, GroundTruth2DSet,
    GroundTruth3D, GroundTruthSet, Record, RecordSet, Source, Visibility,
};
pub use eval::{ApMode, EvalOptions, EvalReport};
pub use fusion::{CalibrationTable, FusionConfig};
pub use geometry::{Box2D, Box3D, CameraRig, Pose, Vec3};
pub use synth::Scenario;
pub use taxonomy::{CardinalityGroup, Taxonomy};
