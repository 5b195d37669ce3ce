//! Marker-based automatic bounding-box annotation with hemisphere viewpoint
//! coverage tracking.
//!
//! The geometric core (`geometry`, `marker_pose`, `annotate`, `coverage`,
//! `metrics`) is generic over [`Real`] (`f32` or `f64`). The aliases below
//! fix the scalar to `f64`, which is what the session engine, the store and
//! the wire formats use.

// `!(x > t)` comparisons are deliberate: they reject NaN along with small values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod annotate;
pub mod coverage;
pub mod datastore;
pub mod engine;
pub mod geometry;
pub mod linalg;
pub mod marker_pose;
pub mod metrics;
pub mod scalar;
pub mod session;
pub mod simcam;

pub use scalar::Real;

pub type Vec3 = geometry::Vector3<f64>;
pub type UnitQuaternion = geometry::UnitQuaternion<f64>;
pub type Pose = geometry::Pose<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type MarkerSpec = marker_pose::MarkerSpec<f64>;
pub type MarkerObservation = marker_pose::MarkerObservation<f64>;
pub type ObjectModel = annotate::ObjectModel<f64>;
pub type PatchLayout = coverage::PatchLayout<f64>;
pub type HitThresholds = coverage::HitThresholds<f64>;
pub type VariabilityReport = metrics::VariabilityReport<f64>;

pub type Vec3f = geometry::Vector3<f32>;
pub type UnitQuaternionf = geometry::UnitQuaternion<f32>;
pub type Posef = geometry::Pose<f32>;
pub type CameraIntrinsicsf = geometry::CameraIntrinsics<f32>;

pub use annotate::{AnnotationRecord, BoundingBox};
pub use coverage::CoverageState;
pub use datastore::{DatasetManifest, Store, StoreError};
pub use engine::{Clock, Engine, EngineError, ManualClock, StartOptions, SystemClock};
pub use session::{
    FrameRecord, FrameResult, Mode, Phase, RankingEntry, Session, SessionConfig, SessionStatus,
};
