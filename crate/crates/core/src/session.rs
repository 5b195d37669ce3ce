//! Gamified capture session: countdown, frame intake, finish detection and ranking.
//!
//! All timing is driven by the caller through millisecond timestamps so that
//! scripted runs are reproducible. A session is created in `Countdown`; the
//! first call at or after `created_at + 5 s` moves it to `Capturing` with
//! `started_at` pinned to the exact end of the countdown.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{annotate_bbox, camera_from_object, AnnotateError, AnnotationRecord};
use crate::coverage::{
    build_hemisphere_layout, collection_rate, hit_test, CoverageError, CoverageState, PatchView,
};
use crate::datastore::{image_relpath, StoreError};
use crate::geometry::Vector3;
use crate::marker_pose::estimate_marker_pose;
use crate::{
    CameraIntrinsics, HitThresholds, MarkerObservation, MarkerSpec, ObjectModel, PatchLayout, Pose,
    UnitQuaternion,
};

pub const COUNTDOWN_MS: u64 = 5_000;
pub const FINISH_MESSAGE: &str = "Finish!";
pub const STATUS_SCHEMA_VERSION: u32 = 1;
/// Upper bound on patches; the layout spacing computation is quadratic.
pub const MAX_TARGET_COUNT: u32 = 5_000;

/// The four collection modes: everything on, or one display feature off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-hm")]
    NoHemisphere,
    #[serde(rename = "no-cr")]
    NoRate,
    #[serde(rename = "no-et")]
    NoElapsed,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoHemisphere, Mode::NoRate, Mode::NoElapsed];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoHemisphere => "no-hm",
            Mode::NoRate => "no-cr",
            Mode::NoElapsed => "no-et",
        }
    }

    pub fn flags(&self) -> DisplayFlags {
        DisplayFlags {
            show_hemisphere: *self != Mode::NoHemisphere,
            show_rate: *self != Mode::NoRate,
            show_elapsed: *self != Mode::NoElapsed,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected full, no-hm, no-cr or no-et)"))
    }
}

/// Which status displays the client should render. Recording is unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayFlags {
    pub show_hemisphere: bool,
    pub show_rate: bool,
    pub show_elapsed: bool,
}

fn default_marker_size() -> f64 {
    0.15
}

fn default_display_radius() -> f64 {
    0.4
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics { fx: 1500.0, fy: 1500.0, cx: 960.0, cy: 540.0, width: 1920, height: 1080 }
}

fn default_object_model() -> ObjectModel {
    // 10 cm cube resting on the marker
    ObjectModel::with_half_extents(
        1,
        "object",
        Pose::from_translation(Vector3::new(0.0, 0.0, -0.05)),
        Vector3::new(0.05, 0.05, 0.05),
    )
}

/// Marker +Z (its outward normal) becomes layout +Y.
pub fn default_layout_from_marker() -> Pose {
    Pose::from_rotation(UnitQuaternion::from_axis_angle(
        Vector3::unit_x(),
        -std::f64::consts::FRAC_PI_2,
    ))
}

/// Capture parameters. Only `target_count` and `mode` are required in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Number of images to collect; also the number of hemisphere patches.
    pub target_count: u32,
    /// Marker side length, meters.
    #[serde(default = "default_marker_size")]
    pub marker_size: f64,
    /// Hemisphere radius, meters.
    #[serde(default = "default_display_radius")]
    pub display_radius: f64,
    pub mode: Mode,
    #[serde(default)]
    pub marker_id: u32,
    /// Free-form label used to group trials in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
    /// Defaults to [`HitThresholds::default_for`] the intrinsics.
    #[serde(default)]
    pub thresholds: Option<HitThresholds>,
    #[serde(default = "default_intrinsics")]
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_object_model")]
    pub object_model: ObjectModel,
    /// Mounting transform from the marker frame to the hemisphere layout frame.
    #[serde(default = "default_layout_from_marker")]
    pub layout_from_marker: Pose,
}

impl SessionConfig {
    pub fn new(target_count: u32, mode: Mode) -> Self {
        SessionConfig {
            target_count,
            marker_size: default_marker_size(),
            display_radius: default_display_radius(),
            mode,
            marker_id: 0,
            participant: None,
            thresholds: None,
            intrinsics: default_intrinsics(),
            object_model: default_object_model(),
            layout_from_marker: default_layout_from_marker(),
        }
    }

    pub fn marker_spec(&self) -> MarkerSpec {
        MarkerSpec {
            id: self.marker_id,
            side_length: self.marker_size,
            object_from_marker: self.object_model.object_from_marker,
        }
    }

    pub fn resolved_thresholds(&self) -> HitThresholds {
        self.thresholds.unwrap_or_else(|| HitThresholds::default_for(&self.intrinsics))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut push = |field: &str, message: String| {
            errs.push(FieldError { field: field.to_string(), message })
        };
        if self.target_count < 2 {
            push("target_count", format!("must be at least 2, got {}", self.target_count));
        } else if self.target_count > MAX_TARGET_COUNT {
            push("target_count", format!("must be at most {MAX_TARGET_COUNT}"));
        }
        if !(self.marker_size.is_finite() && self.marker_size > 0.0) {
            push("marker_size", "must be a positive length in meters".into());
        }
        if !(self.display_radius.is_finite() && self.display_radius > 0.0) {
            push("display_radius", "must be a positive length in meters".into());
        }
        if let Err(e) = self.intrinsics.validate() {
            push("intrinsics", e.to_string());
        }
        if let Some(th) = &self.thresholds {
            if let Err(e) = th.validate() {
                push("thresholds", e.to_string());
            }
        }
        if let Err(e) = self.object_model.validate() {
            push("object_model", e.to_string());
        }
        let rot_ok = |p: &Pose| {
            p.rotation.is_finite()
                && p.translation.is_finite()
                && (p.rotation.norm() - 1.0).abs() < 1e-6
        };
        if !rot_ok(&self.layout_from_marker) {
            push("layout_from_marker", "must be a finite rigid transform".into());
        }
        if !rot_ok(&self.object_model.object_from_marker) {
            push("object_model.object_from_marker", "must be a finite rigid transform".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { fields: errs })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("invalid session config: {}", .fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; "))]
pub struct ConfigError {
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Configured,
    Countdown,
    Capturing,
    Finished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Configured => "configured",
            Phase::Countdown => "countdown",
            Phase::Capturing => "capturing",
            Phase::Finished => "finished",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session is {phase}, expected {expected}")]
    WrongPhase { phase: Phase, expected: Phase },
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("manifest inconsistent: {0}")]
    Inconsistent(String),
}

/// One saved image and everything needed to reproduce its annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image_id: u64,
    /// Path relative to the session directory.
    pub image_ref: String,
    pub cam_from_layout: Pose,
    pub patch_index: usize,
    pub annotation: AnnotationRecord,
    /// Milliseconds since capture start.
    pub timestamp_ms: u64,
}

/// Outcome of one submitted frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub marker_found: bool,
    /// `camera_from_layout`, when the marker pose could be estimated.
    pub pose: Option<Pose>,
    pub pose_error: Option<String>,
    pub hit: Option<usize>,
    pub annotation: Option<AnnotationRecord>,
    pub rate_percent: f64,
    pub elapsed_s: f64,
    pub finished: bool,
    pub message: Option<String>,
}

/// Session snapshot served to display clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub schema_version: u32,
    pub session_id: String,
    pub phase: Phase,
    pub mode: Mode,
    pub show_hemisphere: bool,
    pub show_rate: bool,
    pub show_elapsed: bool,
    pub target_count: u32,
    pub collected_count: usize,
    pub rate_percent: f64,
    pub elapsed_s: f64,
    pub countdown_remaining_s: f64,
    pub message: Option<String>,
    pub patches: Vec<PatchView<f64>>,
    pub last_frame_result: Option<FrameResult>,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    layout: PatchLayout,
    coverage: CoverageState,
    phase: Phase,
    created_at_ms: u64,
    started_at_ms: Option<u64>,
    finished_at_ms: Option<u64>,
    frames: Vec<FrameRecord>,
    last_frame_result: Option<FrameResult>,
}

impl Session {
    /// Validates the configuration, builds the layout and enters the countdown.
    pub fn start(id: impl Into<String>, mut config: SessionConfig, now_ms: u64) -> Result<Self, SessionError> {
        config.validate()?;
        config.thresholds = Some(config.resolved_thresholds());
        let layout = build_hemisphere_layout(config.target_count as usize, config.display_radius)?;
        let coverage = CoverageState::new(layout.n_patches);
        let mut s = Session {
            id: id.into(),
            config,
            layout,
            coverage,
            phase: Phase::Configured,
            created_at_ms: now_ms,
            started_at_ms: None,
            finished_at_ms: None,
            frames: Vec::new(),
            last_frame_result: None,
        };
        s.phase = Phase::Countdown;
        Ok(s)
    }

    /// Rebuilds a session from its persisted parts.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        id: String,
        config: SessionConfig,
        created_at_ms: u64,
        started_at_ms: Option<u64>,
        finished_at_ms: Option<u64>,
        frames: Vec<FrameRecord>,
    ) -> Result<Self, SessionError> {
        let mut s = Session::start(id, config, created_at_ms)?;
        for f in &frames {
            s.coverage.mark_collected(f.patch_index)?;
        }
        s.frames = frames;
        s.started_at_ms = started_at_ms;
        s.finished_at_ms = finished_at_ms;
        s.phase = match (started_at_ms, finished_at_ms) {
            (_, Some(_)) if s.coverage.is_complete() => Phase::Finished,
            (_, Some(_)) => {
                return Err(SessionError::Inconsistent("finished with uncollected patches".into()))
            }
            (Some(_), None) => Phase::Capturing,
            (None, None) => Phase::Countdown,
        };
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn coverage(&self) -> &CoverageState {
        &self.coverage
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn created_at_ms(&self) -> u64 {
        self.created_at_ms
    }

    pub fn started_at_ms(&self) -> Option<u64> {
        self.started_at_ms
    }

    pub fn finished_at_ms(&self) -> Option<u64> {
        self.finished_at_ms
    }

    pub fn rate_percent(&self) -> f64 {
        collection_rate(&self.coverage)
    }

    /// Seconds from end of countdown to the final capture.
    pub fn capture_time_s(&self) -> Option<f64> {
        match (self.started_at_ms, self.finished_at_ms) {
            (Some(s), Some(f)) => Some(f.saturating_sub(s) as f64 / 1000.0),
            _ => None,
        }
    }

    pub fn elapsed_s(&self, now_ms: u64) -> f64 {
        match (self.phase, self.started_at_ms) {
            (Phase::Finished, _) => self.capture_time_s().unwrap_or(0.0),
            (Phase::Capturing, Some(s)) => now_ms.saturating_sub(s) as f64 / 1000.0,
            _ => 0.0,
        }
    }

    /// Ends the countdown once five seconds have passed.
    pub fn tick(&mut self, now_ms: u64) {
        if self.phase == Phase::Countdown && now_ms >= self.created_at_ms + COUNTDOWN_MS {
            self.phase = Phase::Capturing;
            self.started_at_ms = Some(self.created_at_ms + COUNTDOWN_MS);
        }
    }

    fn frame_result(&self, now_ms: u64) -> FrameResult {
        FrameResult {
            marker_found: false,
            pose: None,
            pose_error: None,
            hit: None,
            annotation: None,
            rate_percent: self.rate_percent(),
            elapsed_s: self.elapsed_s(now_ms),
            finished: self.phase == Phase::Finished,
            message: (self.phase == Phase::Finished).then(|| FINISH_MESSAGE.to_string()),
        }
    }

    /// Processes one camera frame.
    ///
    /// On a hit, `persist` receives the new record before any state changes;
    /// if it fails the session is left untouched. Frames without the
    /// configured marker, without a usable pose or without a hit change
    /// nothing and are not persisted.
    pub fn submit_frame<F>(
        &mut self,
        observations: &[MarkerObservation],
        now_ms: u64,
        persist: F,
    ) -> Result<FrameResult, SessionError>
    where
        F: FnOnce(&FrameRecord) -> Result<(), StoreError>,
    {
        self.tick(now_ms);
        if self.phase != Phase::Capturing {
            return Err(SessionError::WrongPhase { phase: self.phase, expected: Phase::Capturing });
        }
        let mut result = self.frame_result(now_ms);
        let spec = self.config.marker_spec();
        let Some(obs) = observations.iter().find(|o| o.marker_id == spec.id) else {
            self.last_frame_result = Some(result.clone());
            return Ok(result);
        };
        result.marker_found = true;

        let cam_from_marker = match estimate_marker_pose(obs, &self.config.intrinsics, &spec) {
            Ok(p) => p,
            Err(e) => {
                result.pose_error = Some(e.to_string());
                self.last_frame_result = Some(result.clone());
                return Ok(result);
            }
        };
        let cam_from_layout = cam_from_marker.compose(&self.config.layout_from_marker.inverse());
        result.pose = Some(cam_from_layout);

        let thresholds = self.config.resolved_thresholds();
        let Some(patch) = hit_test(
            &cam_from_layout,
            &self.config.intrinsics,
            &self.layout,
            &self.coverage,
            &thresholds,
        ) else {
            self.last_frame_result = Some(result.clone());
            return Ok(result);
        };

        let cam_from_obj = camera_from_object(&cam_from_marker, &self.config.object_model);
        let bbox = match annotate_bbox(&self.config.intrinsics, &cam_from_obj, &self.config.object_model) {
            Ok(b) => b,
            Err(AnnotateError::NotVisible) | Err(AnnotateError::InvalidModel(_)) => {
                result.pose_error = Some("object not visible; frame discarded".into());
                self.last_frame_result = Some(result.clone());
                return Ok(result);
            }
        };

        let image_id = self.frames.len() as u64 + 1;
        let started = self.started_at_ms.unwrap_or(now_ms);
        let record = FrameRecord {
            image_id,
            image_ref: image_relpath(image_id),
            cam_from_layout,
            patch_index: patch,
            annotation: AnnotationRecord { image_id, class_id: self.config.object_model.class_id, bbox },
            timestamp_ms: now_ms.saturating_sub(started),
        };
        persist(&record)?;

        self.coverage.mark_collected(patch)?;
        result.hit = Some(patch);
        result.annotation = Some(record.annotation);
        self.frames.push(record);
        if self.coverage.is_complete() {
            self.phase = Phase::Finished;
            self.finished_at_ms = Some(now_ms.max(started));
            result.finished = true;
            result.message = Some(FINISH_MESSAGE.to_string());
        }
        result.rate_percent = self.rate_percent();
        result.elapsed_s = self.elapsed_s(now_ms);
        self.last_frame_result = Some(result.clone());
        Ok(result)
    }

    pub fn status(&self, now_ms: u64) -> SessionStatus {
        let flags = self.config.mode.flags();
        let countdown_remaining_ms = match self.phase {
            Phase::Configured | Phase::Countdown => {
                (self.created_at_ms + COUNTDOWN_MS).saturating_sub(now_ms)
            }
            _ => 0,
        };
        SessionStatus {
            schema_version: STATUS_SCHEMA_VERSION,
            session_id: self.id.clone(),
            phase: self.phase,
            mode: self.config.mode,
            show_hemisphere: flags.show_hemisphere,
            show_rate: flags.show_rate,
            show_elapsed: flags.show_elapsed,
            target_count: self.config.target_count,
            collected_count: self.coverage.collected_count(),
            rate_percent: self.rate_percent(),
            elapsed_s: self.elapsed_s(now_ms),
            countdown_remaining_s: countdown_remaining_ms as f64 / 1000.0,
            message: (self.phase == Phase::Finished).then(|| FINISH_MESSAGE.to_string()),
            patches: self.layout.patch_views(&self.coverage),
            last_frame_result: self.last_frame_result.clone(),
        }
    }
}

/// Finished-session facts needed for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishedSummary {
    pub session_id: String,
    pub mode: Mode,
    pub capture_time_s: f64,
    pub image_count: usize,
    pub finished_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub rank: usize,
    pub session_id: String,
    pub mode: Mode,
    /// Seconds per image.
    pub performance: f64,
    /// Seconds.
    pub capture_time: f64,
    pub image_count: usize,
}

/// Fastest capture first; equal times are ordered by who finished first.
pub fn ranking(finished: &[FinishedSummary]) -> Vec<RankingEntry> {
    let mut sorted: Vec<&FinishedSummary> = finished.iter().collect();
    sorted.sort_by(|a, b| {
        a.capture_time_s
            .total_cmp(&b.capture_time_s)
            .then(a.finished_at_ms.cmp(&b.finished_at_ms))
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, s)| RankingEntry {
            rank: i + 1,
            session_id: s.session_id.clone(),
            mode: s.mode,
            performance: if s.image_count > 0 {
                s.capture_time_s / s.image_count as f64
            } else {
                f64::INFINITY
            },
            capture_time: s.capture_time_s,
            image_count: s.image_count,
        })
        .collect()
}
