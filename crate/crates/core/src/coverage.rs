//! Hemisphere patch layout, center-hit test and collection-rate accounting.
//!
//! Patch centers follow a generalized spiral restricted to the upper half of
//! the sphere: for `k = 1..=n`, `h_k = (k - 0.5) / n`, `φ_k = acos(h_k)` and
//! the azimuth advances by `3.6 / sqrt(2n) / sqrt(1 - h_k²)`. The `2n` in the
//! step keeps the density of an `n`-of-`2n` full-sphere spiral.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    look_at_rotation, spherical_to_cartesian, CameraIntrinsics, GeometryError, Pose,
    UnitQuaternion, Vector3,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoverageError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("patch {0} is already collected")]
    AlreadyCollected(usize),
    #[error("patch index {index} out of range for {n} patches")]
    OutOfRange { index: usize, n: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Patches on a hemisphere of `radius` around the layout origin (+Y up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PatchLayout<T> {
    pub radius: T,
    pub n_patches: usize,
    pub centers: Vec<Vector3<T>>,
    /// Local +Z of each patch points outward along its center direction.
    pub orientations: Vec<UnitQuaternion<T>>,
    /// Angular half-size of each rendered rectangle, radians.
    pub patch_half_angle: T,
}

/// Spiral polar and azimuth angles for `n` hemisphere points.
fn spiral_angles<T: Real>(n: usize) -> Vec<(T, T)> {
    let nf = T::from_usize(n).unwrap_or_else(T::max_value);
    let step = T::lit(3.6) / (T::lit(2.0) * nf).sqrt();
    let tau = T::lit(2.0) * T::PI();
    let mut theta = T::zero();
    (1..=n)
        .map(|k| {
            let h = (T::from_usize(k).unwrap_or_else(T::max_value) - T::lit(0.5)) / nf;
            if k > 1 {
                theta = (theta + step / (T::one() - h * h).sqrt()) % tau;
            }
            (h.acos(), theta)
        })
        .collect()
}

/// Smallest angle in radians between any two unit directions (brute force).
pub fn min_angular_separation<T: Real>(dirs: &[Vector3<T>]) -> Option<T> {
    let units: Vec<Vector3<T>> = dirs.iter().filter_map(|d| d.try_normalize()).collect();
    let mut best: Option<T> = None;
    for i in 0..units.len() {
        for j in (i + 1)..units.len() {
            // atan2 of |a×b| and a·b is accurate for small angles
            let a = units[i].cross(&units[j]).norm().atan2(units[i].dot(&units[j]));
            best = Some(best.map_or(a, |b| b.min(a)));
        }
    }
    best
}

pub fn build_hemisphere_layout<T: Real>(n: usize, radius: T) -> Result<PatchLayout<T>, CoverageError> {
    if n < 2 {
        return Err(CoverageError::InvalidArgument(format!("need at least 2 patches, got {n}")));
    }
    if !(radius.is_finite() && radius > T::zero()) {
        return Err(CoverageError::InvalidArgument("radius must be positive".into()));
    }
    let mut centers = Vec::with_capacity(n);
    let mut orientations = Vec::with_capacity(n);
    for (phi, theta) in spiral_angles::<T>(n) {
        let c = spherical_to_cartesian(radius, phi, theta)?;
        orientations.push(look_at_rotation(c, c * T::lit(2.0), Vector3::unit_y())?);
        centers.push(c);
    }
    let spacing = min_angular_separation(&centers).unwrap_or_else(T::zero);
    Ok(PatchLayout {
        radius,
        n_patches: n,
        centers,
        orientations,
        patch_half_angle: T::lit(0.8) * spacing * T::lit(0.5),
    })
}

/// Collected flags, one per patch. Flags only ever go from false to true.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageState {
    collected: Vec<bool>,
    collected_count: usize,
}

impl CoverageState {
    pub fn new(n: usize) -> Self {
        CoverageState { collected: vec![false; n], collected_count: 0 }
    }

    pub fn n_patches(&self) -> usize {
        self.collected.len()
    }

    pub fn collected_count(&self) -> usize {
        self.collected_count
    }

    pub fn is_collected(&self, idx: usize) -> bool {
        self.collected.get(idx).copied().unwrap_or(false)
    }

    pub fn collected(&self) -> &[bool] {
        &self.collected
    }

    pub fn is_complete(&self) -> bool {
        self.collected_count == self.collected.len()
    }

    pub fn mark_collected(&mut self, idx: usize) -> Result<(), CoverageError> {
        let n = self.collected.len();
        let slot = self
            .collected
            .get_mut(idx)
            .ok_or(CoverageError::OutOfRange { index: idx, n })?;
        if *slot {
            return Err(CoverageError::AlreadyCollected(idx));
        }
        *slot = true;
        self.collected_count += 1;
        Ok(())
    }
}

/// Percentage of collected patches, `100 · collected / n`.
pub fn collection_rate(state: &CoverageState) -> f64 {
    if state.n_patches() == 0 {
        return 0.0;
    }
    100.0 * state.collected_count as f64 / state.n_patches() as f64
}

/// Acceptance window for counting a frame as capturing a patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HitThresholds<T> {
    /// Max distance in pixels between the projected patch center and (cx, cy).
    pub center_px_radius: T,
    /// Camera-to-origin distance band, meters.
    pub min_distance: T,
    pub max_distance: T,
}

impl<T: Real> HitThresholds<T> {
    /// 5% of the image diagonal, distance band [0.3 m, 1.5 m].
    pub fn default_for(k: &CameraIntrinsics<T>) -> Self {
        HitThresholds {
            center_px_radius: T::lit(0.05) * k.diagonal(),
            min_distance: T::lit(0.3),
            max_distance: T::lit(1.5),
        }
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let pos = |v: T| v.is_finite() && v > T::zero();
        if !(pos(self.center_px_radius) && pos(self.min_distance) && pos(self.max_distance)) {
            return Err(CoverageError::InvalidArgument("thresholds must be positive".into()));
        }
        if self.min_distance >= self.max_distance {
            return Err(CoverageError::InvalidArgument(
                "min_distance must be below max_distance".into(),
            ));
        }
        Ok(())
    }
}

/// Picks the uncollected patch closest to the image center, if any passes
/// every threshold. Ties go to the lowest index.
pub fn hit_test<T: Real>(
    cam_from_layout: &Pose<T>,
    k: &CameraIntrinsics<T>,
    layout: &PatchLayout<T>,
    state: &CoverageState,
    th: &HitThresholds<T>,
) -> Option<usize> {
    let cam_pos = cam_from_layout.target_origin_in_source();
    let dist = cam_pos.norm();
    if !(dist >= th.min_distance && dist <= th.max_distance) {
        return None;
    }
    let cam_dir = cam_pos.try_normalize()?;
    let mut best: Option<(usize, T)> = None;
    for (idx, center) in layout.centers.iter().enumerate() {
        if state.is_collected(idx) {
            continue;
        }
        let Some(dir) = center.try_normalize() else { continue };
        if !(dir.dot(&cam_dir) > T::zero()) {
            continue;
        }
        let Ok([u, v]) = k.project_camera_point(cam_from_layout.transform_point(*center)) else {
            continue;
        };
        let px = (u - k.cx).hypot(v - k.cy);
        if !(px <= th.center_px_radius) {
            continue;
        }
        if best.is_none_or(|(_, b)| px < b) {
            best = Some((idx, px));
        }
    }
    best.map(|(idx, _)| idx)
}

/// Per-patch render state sent to display clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PatchView<T> {
    pub index: usize,
    pub center: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
    pub half_angle: T,
    pub collected: bool,
}

impl<T: Real> PatchLayout<T> {
    pub fn patch_views(&self, state: &CoverageState) -> Vec<PatchView<T>> {
        self.centers
            .iter()
            .zip(&self.orientations)
            .enumerate()
            .map(|(index, (c, o))| PatchView {
                index,
                center: *c,
                orientation: *o,
                half_angle: self.patch_half_angle,
                collected: state.is_collected(index),
            })
            .collect()
    }
}
