//! Helpers shared by the integration suites. The oracles here deliberately
//! avoid the crate's own projection and rotation code.
#![allow(dead_code)]

use hemicap::geometry::{Pose, UnitQuaternion, Vector3};
use hemicap::marker_pose::marker_corners_3d;
use hemicap::simcam::camera_looking_at;
use hemicap::{BoundingBox, CameraIntrinsics, MarkerSpec};
use rand::Rng;

/// Rotation matrix of a unit quaternion, written out longhand.
pub fn oracle_matrix(q: &UnitQuaternion<f64>) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn oracle_transform(pose: &Pose<f64>, p: [f64; 3]) -> [f64; 3] {
    let r = oracle_matrix(&pose.rotation);
    let t = [pose.translation.x, pose.translation.y, pose.translation.z];
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
}

/// Brute force: project every corner in front of the camera, take the
/// integer hull, clip to the image. `None` when nothing is left.
pub fn oracle_bbox(k: &CameraIntrinsics, cam_from_object: &Pose<f64>, corners: &[Vector3<f64>]) -> Option<BoundingBox> {
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for c in corners {
        let [x, y, z] = oracle_transform(cam_from_object, [c.x, c.y, c.z]);
        if z > 1e-6 {
            us.push(k.fx * x / z + k.cx);
            vs.push(k.fy * y / z + k.cy);
        }
    }
    if us.is_empty() {
        return None;
    }
    let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
    let clip = |v: f64, max: u32| v.clamp(0.0, max as f64) as u32;
    let b = BoundingBox {
        xmin: clip(lo(&us), k.width),
        ymin: clip(lo(&vs), k.height),
        xmax: clip(hi(&us), k.width),
        ymax: clip(hi(&vs), k.height),
    };
    (b.xmin < b.xmax && b.ymin < b.ymax).then_some(b)
}

pub fn marker_in_view(k: &CameraIntrinsics, cam_from_marker: &Pose<f64>, spec: &MarkerSpec) -> bool {
    marker_corners_3d(spec).iter().all(|c| {
        let [x, y, z] = oracle_transform(cam_from_marker, [c.x, c.y, c.z]);
        if z <= 1e-6 {
            return false;
        }
        let (u, v) = (k.fx * x / z + k.cx, k.fy * y / z + k.cy);
        u >= 0.0 && v >= 0.0 && u <= k.width as f64 && v <= k.height as f64
    })
}

/// `camera_from_marker` at `distance` from the marker center, at most
/// `max_tilt_deg` off the marker normal, aimed near the marker with a random
/// roll. Resamples until the whole marker is in the image.
pub fn random_view<R: Rng>(
    rng: &mut R,
    k: &CameraIntrinsics,
    spec: &MarkerSpec,
    distance: f64,
    max_tilt_deg: f64,
) -> Pose<f64> {
    loop {
        let tilt = rng.random_range(0.0..=max_tilt_deg).to_radians();
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let eye = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()) * distance;
        let aim_spread = 0.15 * distance;
        let target = Vector3::new(
            rng.random_range(-aim_spread..aim_spread),
            rng.random_range(-aim_spread..aim_spread),
            0.0,
        );
        let Ok(look) = camera_looking_at(eye, target) else { continue };
        let roll = UnitQuaternion::from_axis_angle(Vector3::unit_z(), rng.random_range(-0.5..0.5));
        let pose = Pose::from_rotation(roll).compose(&look);
        if marker_in_view(k, &pose, spec) {
            return pose;
        }
    }
}

/// Every regular file under `root`, relative path → bytes, sorted.
pub fn tree_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
