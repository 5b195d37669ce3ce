//! Synthetic camera harness: marker observations from ground-truth poses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::PatchLayout;
use crate::datastore::PLACEHOLDER_PNG;
use crate::engine::{Engine, EngineError, ManualClock, StartOptions};
use crate::geometry::{look_at_rotation, CameraIntrinsics, GeometryError, Pose, Vector3};
use crate::marker_pose::{marker_corners_3d, MarkerObservation, MarkerSpec};
use crate::scalar::Real;
use crate::session::{FrameResult, SessionConfig, COUNTDOWN_MS};

/// Projects the marker corners through `gt_cam_from_marker` and adds i.i.d.
/// Gaussian pixel noise with standard deviation `noise_px` (0 disables noise).
pub fn synth_observation<T: Real, R: Rng + ?Sized>(
    gt_cam_from_marker: &Pose<T>,
    k: &CameraIntrinsics<T>,
    spec: &MarkerSpec<T>,
    noise_px: f64,
    timestamp_ms: u64,
    rng: &mut R,
) -> Result<MarkerObservation<T>, GeometryError> {
    if !(noise_px.is_finite() && noise_px >= 0.0) {
        return Err(GeometryError::InvalidArgument("noise must be non-negative".into()));
    }
    let noise = Normal::new(0.0, noise_px)
        .map_err(|e| GeometryError::InvalidArgument(e.to_string()))?;
    let mut corners = [[T::zero(); 2]; 4];
    for (slot, p) in corners.iter_mut().zip(marker_corners_3d(spec)) {
        let [u, v] = k.project_camera_point(gt_cam_from_marker.transform_point(p))?;
        *slot = if noise_px > 0.0 {
            [u + T::lit(noise.sample(rng)), v + T::lit(noise.sample(rng))]
        } else {
            [u, v]
        };
    }
    Ok(MarkerObservation { marker_id: spec.id, corners, timestamp_ms })
}

/// `camera_from_world` for a camera at `eye` looking at `target`, with image
/// "down" as close to world -Y as possible.
pub fn camera_looking_at<T: Real>(eye: Vector3<T>, target: Vector3<T>) -> Result<Pose<T>, GeometryError> {
    let world_from_cam = Pose::new(look_at_rotation(eye, target, -Vector3::unit_y())?, eye);
    Ok(world_from_cam.inverse())
}

/// One `camera_from_layout` pose per patch, at `standoff_factor · radius`
/// along the patch center direction and looking at the origin.
pub fn scripted_trajectory<T: Real>(
    layout: &PatchLayout<T>,
    standoff_factor: T,
) -> Result<Vec<Pose<T>>, GeometryError> {
    if !(standoff_factor.is_finite() && standoff_factor >= T::one()) {
        return Err(GeometryError::InvalidArgument("standoff factor must be at least 1".into()));
    }
    layout
        .centers
        .iter()
        .map(|c| {
            let dir = c
                .try_normalize()
                .ok_or_else(|| GeometryError::InvalidArgument("zero patch center".into()))?;
            camera_looking_at(dir * (standoff_factor * layout.radius), Vector3::zeros())
        })
        .collect()
}

/// Random `camera_from_layout` poses on the upper hemisphere shell between
/// `min_distance` and `max_distance`, looking at the origin.
pub fn random_walk_trajectory<R: Rng + ?Sized>(
    steps: usize,
    min_distance: f64,
    max_distance: f64,
    min_elevation_deg: f64,
    rng: &mut R,
) -> Vec<Pose<f64>> {
    let mut az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut el: f64 = rng.random_range(min_elevation_deg..90.0f64).to_radians();
    let mut dist: f64 = 0.5 * (min_distance + max_distance);
    let lo_el = min_elevation_deg.to_radians();
    let hi_el = 89.0f64.to_radians();
    (0..steps)
        .map(|_| {
            az = (az + rng.random_range(-0.15..0.15)).rem_euclid(std::f64::consts::TAU);
            el = (el + rng.random_range(-0.08..0.08)).clamp(lo_el, hi_el);
            dist = (dist + rng.random_range(-0.02..0.02)).clamp(min_distance, max_distance);
            let eye = Vector3::new(
                dist * el.cos() * az.sin(),
                dist * el.sin(),
                dist * el.cos() * az.cos(),
            );
            camera_looking_at(eye, Vector3::zeros()).expect("eye is never at the origin")
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("session did not finish within {0} submissions")]
    NotFinished(usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// Trajectory file: `camera_from_layout` poses submitted in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default = "default_frame_interval")]
    pub frame_interval_ms: u64,
    pub camera_from_layout: Vec<Pose<f64>>,
}

fn default_frame_interval() -> u64 {
    100
}

/// One submitted frame as a display client would replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub timestamp_ms: u64,
    pub observations: Vec<MarkerObservation<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub noise_px: f64,
    pub seed: u64,
    pub frame_interval_ms: u64,
    /// The trajectory is repeated until the session finishes or this many
    /// frames have been submitted.
    pub max_submissions: usize,
    pub session_id: Option<String>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            noise_px: 0.0,
            seed: 0,
            frame_interval_ms: default_frame_interval(),
            max_submissions: 100_000,
            session_id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub session_id: String,
    pub results: Vec<FrameResult>,
    pub replay: Vec<ReplayFrame>,
    pub capture_time_s: f64,
}

impl SimulationRun {
    pub fn submissions(&self) -> usize {
        self.results.len()
    }
}

/// Drives a full session through the engine with synthetic observations.
///
/// The clock starts at 0, jumps to the end of the countdown, then advances
/// by `frame_interval_ms` before each submission. Poses that put the marker
/// behind the camera are submitted as frames without observations.
pub fn run_simulated_session(
    engine: &Engine,
    clock: &ManualClock,
    config: SessionConfig,
    trajectory: &[Pose<f64>],
    opts: &SimulationOptions,
) -> Result<SimulationRun, SimError> {
    if trajectory.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spec = config.marker_spec();
    let k = config.intrinsics;
    let layout_from_marker = config.layout_from_marker;

    clock.set(0);
    let id = engine.start_session_with(
        config,
        StartOptions { session_id: opts.session_id.clone(), synthetic: true },
    )?;
    clock.set(COUNTDOWN_MS);

    let mut results = Vec::new();
    let mut replay = Vec::new();
    for cam_from_layout in trajectory.iter().cycle().take(opts.max_submissions) {
        let now = clock.advance(opts.frame_interval_ms);
        let ts = now - COUNTDOWN_MS;
        let cam_from_marker = cam_from_layout.compose(&layout_from_marker);
        let observations: Vec<MarkerObservation<f64>> =
            match synth_observation(&cam_from_marker, &k, &spec, opts.noise_px, ts, &mut rng) {
                Ok(o) => vec![o],
                Err(GeometryError::BehindCamera { .. }) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
        let result = engine.submit_frame(&id, PLACEHOLDER_PNG, &observations)?;
        replay.push(ReplayFrame { timestamp_ms: ts, observations });
        let finished = result.finished;
        results.push(result);
        if finished {
            let capture_time_s = engine.snapshot(&id)?.capture_time_s().unwrap_or(0.0);
            return Ok(SimulationRun { session_id: id, results, replay, capture_time_s });
        }
    }
    Err(SimError::NotFinished(opts.max_submissions))
}

/// Re-submits a recorded frame stream, setting the clock to each frame's
/// capture-relative timestamp. Stops at the first finishing frame.
pub fn run_replay(
    engine: &Engine,
    clock: &ManualClock,
    config: SessionConfig,
    frames: &[ReplayFrame],
    session_id: Option<String>,
) -> Result<SimulationRun, SimError> {
    if frames.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    clock.set(0);
    let id = engine.start_session_with(config, StartOptions { session_id, synthetic: true })?;
    let mut results = Vec::new();
    let mut replay = Vec::new();
    for frame in frames {
        clock.set(COUNTDOWN_MS + frame.timestamp_ms);
        let result = engine.submit_frame(&id, PLACEHOLDER_PNG, &frame.observations)?;
        replay.push(frame.clone());
        let finished = result.finished;
        results.push(result);
        if finished {
            let capture_time_s = engine.snapshot(&id)?.capture_time_s().unwrap_or(0.0);
            return Ok(SimulationRun { session_id: id, results, replay, capture_time_s });
        }
    }
    Err(SimError::NotFinished(frames.len()))
}
