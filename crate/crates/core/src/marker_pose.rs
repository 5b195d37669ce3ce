//! Camera pose from the four corners of one square marker.
//!
//! The pipeline is a normalized DLT homography between the marker plane and
//! the image, a closed-form decomposition into rotation and translation, and
//! a short Gauss-Newton refinement of the reprojection error that also tests
//! the mirrored planar solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Pose, UnitQuaternion, Vector3};
use crate::linalg::{solve, symmetric_eigen, Mat3};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkerPoseError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("marker is behind the camera")]
    MarkerBehindCamera,
    #[error("observation of marker {observed} does not match configured marker {expected}")]
    WrongMarker { expected: u32, observed: u32 },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A square marker attached to the capture jig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct MarkerSpec<T> {
    pub id: u32,
    /// Side length in meters.
    pub side_length: T,
    pub object_from_marker: Pose<T>,
}

impl<T: Real> MarkerSpec<T> {
    pub fn new(id: u32, side_length: T) -> Result<Self, MarkerPoseError> {
        if !(side_length.is_finite() && side_length > T::zero()) {
            return Err(MarkerPoseError::InvalidObservation(
                "marker side length must be positive".into(),
            ));
        }
        Ok(MarkerSpec { id, side_length, object_from_marker: Pose::identity() })
    }
}

/// Corner pixels of one detected marker.
///
/// Corners are ordered top-left, top-right, bottom-right, bottom-left as seen
/// in the marker's own frame (marker +X right, +Y up, +Z out of the face).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerObservation<T> {
    pub marker_id: u32,
    pub corners: [[T; 2]; 4],
    /// Milliseconds since session start.
    #[serde(default)]
    pub timestamp_ms: u64,
}

impl<T: Real> MarkerObservation<T> {
    /// Signed shoelace area of the corner quadrilateral in px².
    pub fn signed_area(&self) -> T {
        let c = &self.corners;
        let mut acc = T::zero();
        for i in 0..4 {
            let j = (i + 1) % 4;
            acc = acc + c[i][0] * c[j][1] - c[j][0] * c[i][1];
        }
        acc * T::lit(0.5)
    }

    pub fn validate(&self) -> Result<(), MarkerPoseError> {
        if self.corners.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MarkerPoseError::InvalidObservation("non-finite corner".into()));
        }
        if !(self.signed_area().abs() > T::one()) {
            return Err(MarkerPoseError::InvalidObservation(
                "corner quadrilateral area must exceed 1 px²".into(),
            ));
        }
        Ok(())
    }
}

/// Marker corners in the marker frame, in observation order.
pub fn marker_corners_3d<T: Real>(spec: &MarkerSpec<T>) -> [Vector3<T>; 4] {
    let h = spec.side_length * T::lit(0.5);
    let z = T::zero();
    [
        Vector3::new(-h, h, z),
        Vector3::new(h, h, z),
        Vector3::new(h, -h, z),
        Vector3::new(-h, -h, z),
    ]
}

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn hartley_normalization<T: Real>(pts: &[[T; 2]]) -> Result<Mat3<T>, MarkerPoseError> {
    let n = T::from_usize(pts.len()).unwrap_or_else(T::one);
    let (sx, sy) = pts.iter().fold((T::zero(), T::zero()), |(a, b), p| (a + p[0], b + p[1]));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = pts
        .iter()
        .fold(T::zero(), |acc, p| acc + (p[0] - mx).hypot(p[1] - my))
        / n;
    if !(mean_dist > T::tiny()) {
        return Err(MarkerPoseError::Degenerate("points coincide".into()));
    }
    let s = T::lit(2.0).sqrt() / mean_dist;
    let z = T::zero();
    Ok(Mat3([[s, z, -s * mx], [z, s, -s * my], [z, z, T::one()]]))
}

fn apply<T: Real>(m: &Mat3<T>, p: [T; 2]) -> [T; 2] {
    [m[(0, 0)] * p[0] + m[(0, 2)], m[(1, 1)] * p[1] + m[(1, 2)]]
}

/// Normalized DLT homography mapping plane points to pixels.
///
/// Each pair is `(plane_xy, pixel_uv)`. The result has unit Frobenius norm
/// and a non-negative bottom-right entry.
pub fn estimate_homography<T: Real>(pairs: &[([T; 2], [T; 2])]) -> Result<Mat3<T>, MarkerPoseError> {
    if pairs.len() < 4 {
        return Err(MarkerPoseError::Degenerate(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(a, b)| a.iter().chain(b.iter()).any(|v| !v.is_finite())) {
        return Err(MarkerPoseError::Degenerate("non-finite correspondence".into()));
    }
    let src: Vec<[T; 2]> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<[T; 2]> = pairs.iter().map(|p| p.1).collect();
    let ts = hartley_normalization(&src)?;
    let td = hartley_normalization(&dst)?;
    let src_n: Vec<[T; 2]> = src.iter().map(|&p| apply(&ts, p)).collect();
    let dst_n: Vec<[T; 2]> = dst.iter().map(|&p| apply(&td, p)).collect();

    if pairs.len() == 4 {
        // Three collinear points among four leave the system rank deficient.
        for skip in 0..4 {
            let tri: Vec<[T; 2]> = (0..4).filter(|&i| i != skip).map(|i| src_n[i]).collect();
            let area = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
                - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1]);
            if area.abs() < T::lit(1e-6) {
                return Err(MarkerPoseError::Degenerate("three plane points are collinear".into()));
            }
        }
    }

    // Accumulate AᵀA for the 2n×9 DLT system.
    let mut ata = [[T::zero(); 9]; 9];
    for (s, d) in src_n.iter().zip(&dst_n) {
        let (x, y) = (s[0], s[1]);
        let (u, v) = (d[0], d[1]);
        let z = T::zero();
        let o = T::one();
        let rows = [
            [-x, -y, -o, z, z, z, u * x, u * y, u],
            [z, z, z, -x, -y, -o, v * x, v * y, v],
        ];
        for r in &rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[i][j] = ata[i][j] + r[i] * r[j];
                }
            }
        }
    }
    let (values, vectors) = symmetric_eigen(ata);
    let scale = values[8].abs().max(T::tiny());
    if values[1].abs() / scale < T::epsilon() * T::lit(1e3) {
        return Err(MarkerPoseError::Degenerate("homography system is rank deficient".into()));
    }
    let h = vectors[0];
    let hn = Mat3([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| MarkerPoseError::Degenerate("pixel normalization is singular".into()))?;
    let mut hm = td_inv * hn * ts;
    let norm = hm.frobenius_norm();
    if !(norm > T::tiny()) {
        return Err(MarkerPoseError::Degenerate("zero homography".into()));
    }
    hm = hm.scale(T::one() / norm);
    if hm[(2, 2)] < T::zero() {
        hm = hm.scale(-T::one());
    }
    Ok(hm)
}

/// Frobenius-nearest proper rotation to an arbitrary 3×3 matrix.
///
/// Maximizes `trace(Rᵀ M)` through the dominant eigenvector of the 4×4
/// quaternion form, so the result always has determinant +1.
pub fn nearest_rotation<T: Real>(m: &Mat3<T>) -> UnitQuaternion<T> {
    let (m00, m01, m02) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (m10, m11, m12) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (m20, m21, m22) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    // Quaternion order (w, x, y, z).
    let k = [
        [m00 + m11 + m22, m21 - m12, m02 - m20, m10 - m01],
        [m21 - m12, m00 - m11 - m22, m01 + m10, m02 + m20],
        [m02 - m20, m01 + m10, m11 - m00 - m22, m12 + m21],
        [m10 - m01, m02 + m20, m12 + m21, m22 - m00 - m11],
    ];
    let (_, vectors) = symmetric_eigen(k);
    let q = vectors[3];
    UnitQuaternion::from_components(q[0], q[1], q[2], q[3]).unwrap_or_default()
}

/// Decomposes a plane-to-image homography into `camera_from_marker`.
///
/// The translation sign is chosen so the marker lies in front of the camera.
pub fn pose_from_homography<T: Real>(
    h: &Mat3<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Pose<T>, MarkerPoseError> {
    let k_inv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| MarkerPoseError::Degenerate("intrinsics not invertible".into()))?;
    let m = k_inv * *h;
    let (c1, c2, c3) = (m.column(0), m.column(1), m.column(2));
    let denom = c1.norm() + c2.norm();
    if !(denom > T::tiny()) {
        return Err(MarkerPoseError::Degenerate("homography has vanishing columns".into()));
    }
    let mut lambda = T::lit(2.0) / denom;
    if c3.z * lambda < T::zero() {
        lambda = -lambda;
    }
    let r1 = c1 * lambda;
    let r2 = c2 * lambda;
    let t = c3 * lambda;
    if !(t.z > T::zero()) {
        return Err(MarkerPoseError::MarkerBehindCamera);
    }
    let r3 = r1.cross(&r2);
    let rotation = nearest_rotation(&Mat3::from_columns(r1, r2, r3));
    Ok(Pose::new(rotation, t))
}

/// Sum of squared reprojection errors, or `None` if any point is not in front.
fn reprojection_sse<T: Real>(
    k: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    object: &[Vector3<T>; 4],
    pixels: &[[T; 2]; 4],
) -> Option<T> {
    let mut sse = T::zero();
    for (p, uv) in object.iter().zip(pixels) {
        let proj = k.project_camera_point(pose.transform_point(*p)).ok()?;
        let (du, dv) = (proj[0] - uv[0], proj[1] - uv[1]);
        sse = sse + du * du + dv * dv;
    }
    Some(sse)
}

/// Gauss-Newton refinement of `camera_from_marker` on the corner reprojection error.
fn refine_pose<T: Real>(
    k: &CameraIntrinsics<T>,
    mut pose: Pose<T>,
    object: &[Vector3<T>; 4],
    pixels: &[[T; 2]; 4],
) -> Option<(Pose<T>, T)> {
    let mut cost = reprojection_sse(k, &pose, object, pixels)?;
    let mut damping = T::lit(1e-6);
    for _ in 0..30 {
        let mut jtj = [[T::zero(); 6]; 6];
        let mut jtr = [T::zero(); 6];
        for (p, uv) in object.iter().zip(pixels) {
            let pc = pose.transform_point(*p);
            let iz = T::one() / pc.z;
            let u = k.fx * pc.x * iz + k.cx;
            let v = k.fy * pc.y * iz + k.cy;
            let res = [u - uv[0], v - uv[1]];
            // d(uv)/d(pc)
            let du = [k.fx * iz, T::zero(), -k.fx * pc.x * iz * iz];
            let dv = [T::zero(), k.fy * iz, -k.fy * pc.y * iz * iz];
            // left perturbation: d(pc) = -[pc]x dθ + dt
            let dpc = |row: &[T; 3]| -> [T; 6] {
                let (a, b, c) = (row[0], row[1], row[2]);
                [
                    b * pc.z - c * pc.y,
                    c * pc.x - a * pc.z,
                    a * pc.y - b * pc.x,
                    a,
                    b,
                    c,
                ]
            };
            for (jrow, r) in [dpc(&du), dpc(&dv)].iter().zip(res) {
                for i in 0..6 {
                    jtr[i] = jtr[i] + jrow[i] * r;
                    for j in 0..6 {
                        jtj[i][j] = jtj[i][j] + jrow[i] * jrow[j];
                    }
                }
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] = row[i] * (T::one() + damping) + damping;
            }
            let neg: [T; 6] = std::array::from_fn(|i| -jtr[i]);
            let Some(step) = solve(a, neg) else {
                damping = damping * T::lit(10.0);
                continue;
            };
            let rot = Vector3::new(step[0], step[1], step[2]);
            let delta = Pose::new(
                UnitQuaternion::from_axis_angle(rot, rot.norm()),
                Vector3::new(step[3], step[4], step[5]),
            );
            let candidate = delta.compose(&pose);
            match reprojection_sse(k, &candidate, object, pixels) {
                Some(c) if c <= cost => {
                    let converged = cost - c <= cost * T::lit(1e-12);
                    pose = candidate;
                    cost = c;
                    damping = (damping * T::lit(0.1)).max(T::lit(1e-12));
                    improved = !converged;
                    break;
                }
                _ => damping = damping * T::lit(10.0),
            }
        }
        if !improved {
            break;
        }
    }
    Some((pose, cost))
}

/// Mirror image of a planar pose about the line of sight: the second local
/// minimum of the reprojection error for a square viewed from afar.
fn mirrored_candidate<T: Real>(pose: &Pose<T>) -> Option<Pose<T>> {
    let view = pose.translation.try_normalize()?;
    let normal = pose.rotation.rotate(Vector3::unit_z());
    let mirrored = view * (T::lit(2.0) * normal.dot(&view)) - normal;
    let axis = normal.cross(&mirrored);
    if axis.norm() <= T::lit(1e-9) {
        return None;
    }
    let angle = normal.dot(&mirrored).max(-T::one()).min(T::one()).acos();
    let delta = UnitQuaternion::from_axis_angle(axis, angle);
    Some(Pose::new((delta * pose.rotation).normalized(), pose.translation))
}

/// `camera_from_marker` for one observed marker.
pub fn estimate_marker_pose<T: Real>(
    obs: &MarkerObservation<T>,
    k: &CameraIntrinsics<T>,
    spec: &MarkerSpec<T>,
) -> Result<Pose<T>, MarkerPoseError> {
    if obs.marker_id != spec.id {
        return Err(MarkerPoseError::WrongMarker { expected: spec.id, observed: obs.marker_id });
    }
    obs.validate()?;
    let object = marker_corners_3d(spec);
    let pairs: Vec<([T; 2], [T; 2])> = object
        .iter()
        .zip(&obs.corners)
        .map(|(p, uv)| ([p.x, p.y], *uv))
        .collect();
    let h = estimate_homography(&pairs)?;
    let initial = pose_from_homography(&h, k)?;

    let mut best: Option<(Pose<T>, T)> = refine_pose(k, initial, &object, &obs.corners);
    if let Some(alt) = mirrored_candidate(&best.map(|b| b.0).unwrap_or(initial)) {
        if let Some((pose, cost)) = refine_pose(k, alt, &object, &obs.corners) {
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((pose, cost));
            }
        }
    }
    match best {
        Some((pose, _)) if pose.translation.z > T::zero() => Ok(pose),
        Some(_) => Err(MarkerPoseError::MarkerBehindCamera),
        None if initial.translation.z > T::zero() => Ok(initial),
        None => Err(MarkerPoseError::MarkerBehindCamera),
    }
}
