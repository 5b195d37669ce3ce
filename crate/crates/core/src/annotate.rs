//! Bounding-box annotation from a camera pose and the object's 3D extents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vector3, MIN_DEPTH};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotateError {
    #[error("object is not visible in the image")]
    NotVisible,
    #[error("invalid object model: {0}")]
    InvalidModel(String),
}

/// Target object: its class and the eight corners of its 3D bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>")
)]
pub struct ObjectModel<T> {
    pub class_id: u32,
    pub class_name: String,
    pub object_from_marker: Pose<T>,
    /// Box corners in the object frame, meters, any order.
    pub extent_box: [Vector3<T>; 8],
}

impl<T: Real> ObjectModel<T> {
    /// Axis-aligned box centered on the object origin.
    pub fn with_half_extents(
        class_id: u32,
        class_name: impl Into<String>,
        object_from_marker: Pose<T>,
        half: Vector3<T>,
    ) -> Self {
        let extent_box = std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -half.x } else { half.x };
            let sy = if i & 2 == 0 { -half.y } else { half.y };
            let sz = if i & 4 == 0 { -half.z } else { half.z };
            Vector3::new(sx, sy, sz)
        });
        ObjectModel { class_id, class_name: class_name.into(), object_from_marker, extent_box }
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.class_name.trim().is_empty() {
            return Err(AnnotateError::InvalidModel("class_name must not be empty".into()));
        }
        if self.extent_box.iter().any(|p| !p.is_finite()) {
            return Err(AnnotateError::InvalidModel("extent box has non-finite corners".into()));
        }
        if !is_parallelepiped(&self.extent_box) {
            return Err(AnnotateError::InvalidModel(
                "extent box corners do not form a parallelepiped".into(),
            ));
        }
        Ok(())
    }
}

/// True when the 8 points are `p0 + {0,1}·a + {0,1}·b + {0,1}·c` for some
/// independent edge vectors, in any order.
fn is_parallelepiped<T: Real>(pts: &[Vector3<T>; 8]) -> bool {
    let scale = pts
        .iter()
        .map(|p| (*p - pts[0]).norm())
        .fold(T::zero(), T::max);
    if !(scale > T::tiny()) {
        return false;
    }
    let tol = scale * T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
    let others: Vec<usize> = (1..8).collect();
    for i in 0..7 {
        for j in (i + 1)..7 {
            for k in (j + 1)..7 {
                let a = pts[others[i]] - pts[0];
                let b = pts[others[j]] - pts[0];
                let c = pts[others[k]] - pts[0];
                if a.cross(&b).dot(&c).abs() <= tol * scale * scale {
                    continue;
                }
                let mut used = [false; 8];
                let all = (0..8usize).all(|mask| {
                    let mut p = pts[0];
                    if mask & 1 != 0 {
                        p = p + a;
                    }
                    if mask & 2 != 0 {
                        p = p + b;
                    }
                    if mask & 4 != 0 {
                        p = p + c;
                    }
                    match (0..8).find(|&m| !used[m] && (pts[m] - p).norm() <= tol) {
                        Some(m) => {
                            used[m] = true;
                            true
                        }
                        None => false,
                    }
                });
                if all {
                    return true;
                }
            }
        }
    }
    false
}

/// Integer pixel box, `xmin < xmax <= width`, `ymin < ymax <= height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl BoundingBox {
    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    /// COCO `[x, y, w, h]`.
    pub fn to_xywh(&self) -> [u32; 4] {
        [self.xmin, self.ymin, self.width(), self.height()]
    }
}

/// One image's box annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BoundingBox,
}

/// `camera_from_object = camera_from_marker ∘ (object_from_marker)⁻¹`.
pub fn camera_from_object<T: Real>(cam_from_marker: &Pose<T>, model: &ObjectModel<T>) -> Pose<T> {
    cam_from_marker.compose(&model.object_from_marker.inverse())
}

/// Axis-aligned hull of the projected box corners, clipped to the image.
///
/// Corners at or behind the camera plane are left out of the hull. Real-valued
/// bounds are widened outward to whole pixels (`floor` for minima, `ceil` for
/// maxima) before clipping.
pub fn annotate_bbox<T: Real>(
    k: &CameraIntrinsics<T>,
    cam_from_object: &Pose<T>,
    model: &ObjectModel<T>,
) -> Result<BoundingBox, AnnotateError> {
    let mut bounds: Option<[T; 4]> = None;
    for corner in &model.extent_box {
        let pc = cam_from_object.transform_point(*corner);
        if !(pc.z > T::lit(MIN_DEPTH)) {
            continue;
        }
        let Ok([u, v]) = k.project_camera_point(pc) else {
            continue;
        };
        bounds = Some(match bounds {
            None => [u, v, u, v],
            Some([x0, y0, x1, y1]) => [x0.min(u), y0.min(v), x1.max(u), y1.max(v)],
        });
    }
    let [x0, y0, x1, y1] = bounds.ok_or(AnnotateError::NotVisible)?;
    let clip = |v: T, hi: u32| -> u32 {
        if v <= T::zero() {
            0
        } else if v >= T::from_u32(hi).unwrap_or_else(T::max_value) {
            hi
        } else {
            v.to_u32().unwrap_or(hi)
        }
    };
    let bbox = BoundingBox {
        xmin: clip(x0.floor(), k.width),
        ymin: clip(y0.floor(), k.height),
        xmax: clip(x1.ceil(), k.width),
        ymax: clip(y1.ceil(), k.height),
    };
    if bbox.xmin >= bbox.xmax || bbox.ymin >= bbox.ymax {
        return Err(AnnotateError::NotVisible);
    }
    Ok(bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn unit_cube() -> ObjectModel<f64> {
        ObjectModel::with_half_extents(1, "cube", Pose::identity(), Vector3::new(0.5, 0.5, 0.5))
    }

    #[test]
    fn cube_on_axis() {
        // corners at depth 1.5 project to 320 ± 500·0.5/1.5 = 320 ± 166.67,
        // which dominate the depth-2.5 corners (± 100).
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 2.0));
        let bbox = annotate_bbox(&k(), &pose, &unit_cube()).unwrap();
        assert_eq!(bbox, BoundingBox { xmin: 153, ymin: 73, xmax: 487, ymax: 407 });
    }

    #[test]
    fn behind_camera() {
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, -3.0));
        assert_eq!(annotate_bbox(&k(), &pose, &unit_cube()), Err(AnnotateError::NotVisible));
    }

    #[test]
    fn partially_off_screen_left_clips_to_zero() {
        let pose = Pose::from_translation(Vector3::new(-1.5, 0.0, 3.0));
        let bbox = annotate_bbox(&k(), &pose, &unit_cube()).unwrap();
        assert_eq!(bbox.xmin, 0);
        assert!(bbox.xmax > 0);
    }

    #[test]
    fn fully_off_screen() {
        let pose = Pose::from_translation(Vector3::new(-10.0, 0.0, 2.0));
        assert_eq!(annotate_bbox(&k(), &pose, &unit_cube()), Err(AnnotateError::NotVisible));
    }

    #[test]
    fn camera_from_object_identity_and_offset() {
        let cam_from_marker = Pose::new(
            UnitQuaternion::from_axis_angle(Vector3::unit_x(), std::f64::consts::PI),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let model = unit_cube();
        assert_eq!(camera_from_object(&cam_from_marker, &model), cam_from_marker);

        // object origin sits 5 cm above the marker: object_from_marker shifts by -5 cm
        let mut shifted = model.clone();
        shifted.object_from_marker = Pose::from_translation(Vector3::new(0.0, 0.0, -0.05));
        let c = camera_from_object(&cam_from_marker, &shifted);
        // marker +Z maps to camera -Z, so the object center is 5 cm closer
        assert!((c.translation - Vector3::new(0.0, 0.0, 0.95)).norm() < 1e-12);
        let back = c.compose(&shifted.object_from_marker);
        assert!((back.translation - cam_from_marker.translation).norm() < 1e-12);
    }

    #[test]
    fn model_validation() {
        let mut m = unit_cube();
        assert!(m.validate().is_ok());
        m.extent_box.reverse();
        assert!(m.validate().is_ok());
        m.extent_box[3].x += 0.2;
        assert!(m.validate().is_err());
        let mut m = unit_cube();
        m.class_name.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn coco_xywh() {
        let b = BoundingBox { xmin: 195, ymin: 115, xmax: 445, ymax: 365 };
        assert_eq!(b.to_xywh(), [195, 115, 250, 250]);
    }
}
