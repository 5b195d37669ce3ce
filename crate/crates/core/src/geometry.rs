//! Vectors, unit quaternions, rigid poses and the pinhole camera model.
//!
//! Frames follow the camera convention used throughout the crate: camera +Z
//! looks forward, +X to the right of the image and +Y down the image. Layout
//! frames use +Y as the up axis of the hemisphere.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat3;
use crate::scalar::Real;

/// Minimum camera-frame depth, in meters, for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
}

/// 3-vector; meters unless stated otherwise. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(
    from = "[T; 3]",
    into = "[T; 3]",
    bound(serialize = "T: Copy + Serialize", deserialize = "T: Deserialize<'de>")
)]
pub struct Vector3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 3]> for Vector3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Vector3 { x, y, z }
    }
}

impl<T> From<Vector3<T>> for [T; 3] {
    fn from(v: Vector3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Real> Vector3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Vector3 { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn unit_y() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction, or `None` for a (near-)zero vector.
    pub fn try_normalize(&self) -> Option<Self> {
        let n = self.norm();
        (n > T::tiny() && n.is_finite()).then(|| *self * (T::one() / n))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Vector3<U> {
        Vector3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for Vector3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vector3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vector3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vector3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Rotation stored as a unit quaternion `w + xi + yj + zk`.
///
/// `q` and `-q` encode the same rotation. Serialized as `[w, x, y, z]`;
/// deserialization rejects quaternions whose norm is off by more than 1e-6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "[T; 4]",
    into = "[T; 4]",
    bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>")
)]
pub struct UnitQuaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> TryFrom<[T; 4]> for UnitQuaternion<T> {
    type Error = GeometryError;

    fn try_from([w, x, y, z]: [T; 4]) -> Result<Self, Self::Error> {
        let q = UnitQuaternion { w, x, y, z };
        let n = q.norm();
        if !n.is_finite() || (n - T::one()).abs() > T::lit(1e-6) {
            return Err(GeometryError::InvalidArgument(format!(
                "quaternion norm {:?} is not 1",
                n
            )));
        }
        Ok(q)
    }
}

impl<T> From<UnitQuaternion<T>> for [T; 4] {
    fn from(q: UnitQuaternion<T>) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl<T: Real> Default for UnitQuaternion<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> UnitQuaternion<T> {
    pub fn identity() -> Self {
        UnitQuaternion { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    /// Normalizes the raw components. Fails on a zero or non-finite input.
    pub fn from_components(w: T, x: T, y: T, z: T) -> Result<Self, GeometryError> {
        let raw = UnitQuaternion { w, x, y, z };
        let n = raw.norm();
        if !n.is_finite() || n <= T::tiny() {
            return Err(GeometryError::InvalidArgument(
                "quaternion must be finite and non-zero".into(),
            ));
        }
        Ok(raw.scaled(T::one() / n))
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<T>, angle: T) -> Self {
        let Some(a) = axis.try_normalize() else {
            return Self::identity();
        };
        let half = angle * T::lit(0.5);
        let s = half.sin();
        UnitQuaternion { w: half.cos(), x: a.x * s, y: a.y * s, z: a.z * s }
    }

    /// Converts a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Mat3<T>) -> Self {
        let quarter = T::lit(0.25);
        let one = T::one();
        let two = T::lit(2.0);
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * two;
            UnitQuaternion {
                w: quarter * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (one + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * two;
            UnitQuaternion {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: quarter * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (one + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * two;
            UnitQuaternion {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: quarter * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = (one + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * two;
            UnitQuaternion {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: quarter * s,
            }
        };
        q.normalized()
    }

    pub fn to_rotation_matrix(&self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        Mat3([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        UnitQuaternion { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Same rotation, opposite sign.
    pub fn negated(&self) -> Self {
        self.scaled(-T::one())
    }

    fn scaled(&self, s: T) -> Self {
        UnitQuaternion { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    /// Removes accumulated drift from the unit norm.
    pub fn normalized(&self) -> Self {
        self.scaled(T::one() / self.norm())
    }

    pub fn rotate(&self, v: Vector3<T>) -> Vector3<T> {
        // v' = v + 2w (u × v) + 2 u × (u × v)
        let u = Vector3::new(self.x, self.y, self.z);
        let two = T::lit(2.0);
        let uv = u.cross(&v);
        let uuv = u.cross(&uv);
        v + uv * (two * self.w) + uuv * two
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> T {
        let v = Vector3::new(self.x, self.y, self.z).norm();
        T::lit(2.0) * v.atan2(self.w.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(&self) -> UnitQuaternion<U> {
        UnitQuaternion {
            w: U::lit(self.w.to_f64_lossy()),
            x: U::lit(self.x.to_f64_lossy()),
            y: U::lit(self.y.to_f64_lossy()),
            z: U::lit(self.z.to_f64_lossy()),
        }
        .normalized()
    }
}

impl<T: Real> Mul for UnitQuaternion<T> {
    type Output = Self;

    /// Hamilton product: `(a * b).rotate(v) == a.rotate(b.rotate(v))`.
    fn mul(self, b: Self) -> Self {
        let a = self;
        UnitQuaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }
}

/// Rigid transform `target_from_source`: `p_target = R p_source + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Pose<T> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Pose { rotation: UnitQuaternion::identity(), translation: t }
    }

    pub fn from_rotation(r: UnitQuaternion<T>) -> Self {
        Pose { rotation: r, translation: Vector3::zeros() }
    }

    pub fn transform_point(&self, p: Vector3<T>) -> Vector3<T> {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ rhs`: if `self` is `a_from_b` and `rhs` is `b_from_c`, the
    /// result is `a_from_c`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Pose {
            rotation: (self.rotation * rhs.rotation).normalized(),
            translation: self.rotation.rotate(rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Pose { rotation: r, translation: -r.rotate(self.translation) }
    }

    /// Origin of the target frame expressed in the source frame; for
    /// `camera_from_world` this is the camera center in world coordinates.
    pub fn target_origin_in_source(&self) -> Vector3<T> {
        self.inverse().translation
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose { rotation: self.rotation.cast(), translation: self.translation.cast() }
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidArgument(m.to_string()));
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        let w = T::from_u32(self.width).unwrap_or_else(T::max_value);
        let h = T::from_u32(self.height).unwrap_or_else(T::max_value);
        if !(self.cx >= T::zero() && self.cx < w) || !(self.cy >= T::zero() && self.cy < h) {
            return bad("principal point must lie inside the image");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3<T> {
        let z = T::zero();
        Mat3([[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, T::one()]])
    }

    pub fn width_f(&self) -> T {
        T::from_u32(self.width).unwrap_or_else(T::max_value)
    }

    pub fn height_f(&self) -> T {
        T::from_u32(self.height).unwrap_or_else(T::max_value)
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> T {
        self.width_f().hypot(self.height_f())
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: Vector3<T>) -> Result<[T; 2], GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::InvalidArgument("non-finite point".into()));
        }
        if p.z <= T::lit(MIN_DEPTH) {
            return Err(GeometryError::BehindCamera { depth: p.z.to_f64_lossy() });
        }
        Ok([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

/// Spherical to Cartesian with +Y up: `(r sinφ sinθ, r cosφ, r sinφ cosθ)`.
///
/// `phi` is the polar angle from +Y, `theta` the azimuth measured from +Z
/// towards +X.
pub fn spherical_to_cartesian<T: Real>(r: T, phi: T, theta: T) -> Result<Vector3<T>, GeometryError> {
    if !(r.is_finite() && phi.is_finite() && theta.is_finite()) {
        return Err(GeometryError::InvalidArgument("spherical coordinates must be finite".into()));
    }
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Ok(Vector3::new(r * sp * st, r * cp, r * sp * ct))
}

/// Orientation (`world_from_local`) whose local +Z points from `eye` to `target`
/// and whose local +Y is as close to `up` as possible.
///
/// When `up` is parallel to the viewing direction the alternate up axis +Z is
/// used, or +X if the view is along Z as well.
pub fn look_at_rotation<T: Real>(
    eye: Vector3<T>,
    target: Vector3<T>,
    up: Vector3<T>,
) -> Result<UnitQuaternion<T>, GeometryError> {
    let forward = (target - eye)
        .try_normalize()
        .ok_or_else(|| GeometryError::InvalidArgument("eye and target coincide".into()))?;
    let right = up
        .try_normalize()
        .map(|u| u.cross(&forward))
        .filter(|c| c.norm() > T::lit(1e-9))
        .or_else(|| {
            [Vector3::unit_z(), Vector3::unit_x()]
                .into_iter()
                .map(|alt| alt.cross(&forward))
                .find(|c| c.norm() > T::lit(1e-3))
        })
        .and_then(|c| c.try_normalize())
        .expect("one of the alternate up axes is never parallel");
    let y_axis = forward.cross(&right);
    Ok(UnitQuaternion::from_rotation_matrix(&Mat3::from_columns(right, y_axis, forward)))
}

/// Angle between two orientations in degrees, `2·acos(|q1·q2|)`, range `[0, 180]`.
///
/// Evaluated as `4·atan2(|q1 - s·q2|, |q1 + s·q2|)` with `s = sign(q1·q2)`,
/// which equals the arccos form but stays exact near 0° (so `q` vs `-q` is 0).
pub fn angular_distance<T: Real>(q1: &UnitQuaternion<T>, q2: &UnitQuaternion<T>) -> T {
    let s = if q1.dot(q2) < T::zero() { -T::one() } else { T::one() };
    let diff = [q1.w - s * q2.w, q1.x - s * q2.x, q1.y - s * q2.y, q1.z - s * q2.z];
    let sum = [q1.w + s * q2.w, q1.x + s * q2.x, q1.y + s * q2.y, q1.z + s * q2.z];
    let norm = |v: [T; 4]| v.iter().fold(T::zero(), |a, &c| a + c * c).sqrt();
    (T::lit(4.0) * norm(diff).atan2(norm(sum))).to_degrees()
}

/// Projects a world point through `cam_from_world` and the pinhole intrinsics.
pub fn project_point<T: Real>(
    k: &CameraIntrinsics<T>,
    cam_from_world: &Pose<T>,
    p_world: Vector3<T>,
) -> Result<[T; 2], GeometryError> {
    k.project_camera_point(cam_from_world.transform_point(p_world))
}
