//! Rigid-body transforms and the pinhole camera model.
//!
//! Everything needed to move points among pixel, camera and map coordinate
//! frames, and to compute inter-frame camera motion. Rotations are stored
//! as unit quaternions and converted to matrices only inside operations.
//!
//! Camera frame convention: +z optical axis, +x right, +y down.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Quaternion norm must stay this close to 1 after construction.
const QUAT_NORM_TOL: f64 = 1e-9;
/// Wire-format poses are rejected when the quaternion norm deviates more.
const WIRE_QUAT_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("quaternion norm {0} deviates from 1 by more than {WIRE_QUAT_NORM_TOL}")]
    InvalidQuaternion(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Coordinate frame a point is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Camera,
    Map,
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Frame::Camera => write!(f, "camera"),
            Frame::Map => write!(f, "map"),
        }
    }
}

/// A 3D point tagged with the frame it lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame: Frame,
}

impl Point3 {
    pub fn camera(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z, frame: Frame::Camera }
    }

    pub fn map(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z, frame: Frame::Map }
    }

    pub fn from_vector(v: Vector3<f64>, frame: Frame) -> Self {
        Point3 { x: v.x, y: v.y, z: v.z, frame }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Rigid transform in SE(3): translation plus unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseWire", into = "PoseWire")]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

/// JSON form: `{"t":[x,y,z],"q":[w,x,y,z]}`.
#[derive(Serialize, Deserialize)]
struct PoseWire {
    t: [f64; 3],
    q: [f64; 4],
}

impl TryFrom<PoseWire> for Pose {
    type Error = GeometryError;

    fn try_from(w: PoseWire) -> Result<Self, Self::Error> {
        let q = Quaternion::new(w.q[0], w.q[1], w.q[2], w.q[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > WIRE_QUAT_NORM_TOL {
            return Err(GeometryError::InvalidQuaternion(norm));
        }
        Ok(Pose {
            translation: Vector3::new(w.t[0], w.t[1], w.t[2]),
            rotation: UnitQuaternion::from_quaternion(q),
        })
    }
}

impl From<Pose> for PoseWire {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseWire { t: [p.translation.x, p.translation.y, p.translation.z], q: [q.w, q.i, q.j, q.k] }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Pose { translation, rotation: renormalize(rotation) }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose { translation: Vector3::new(x, y, z), rotation: UnitQuaternion::identity() }
    }

    /// Applies the transform to a raw vector (rotation then translation).
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    // UnitQuaternion arithmetic can drift a few ulps per composition; pull
    // it back onto the unit sphere so the norm invariant holds exactly.
    let inner = q.quaternion();
    debug_assert!((inner.norm() - 1.0).abs() < QUAT_NORM_TOL);
    UnitQuaternion::from_quaternion(*inner)
}

/// Composes two poses: the result applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        translation: a.rotation * b.translation + a.translation,
        rotation: renormalize(a.rotation * b.rotation),
    }
}

/// Inverse transform: `compose(p, invert(p))` is the identity.
pub fn invert(p: &Pose) -> Pose {
    let rot_inv = p.rotation.inverse();
    Pose { translation: -(rot_inv * p.translation), rotation: renormalize(rot_inv) }
}

/// Camera motion between two stamped poses, expressed in the map frame:
/// `t_curr ∘ t_prev⁻¹`, so that `compose(result, t_prev) = t_curr`.
pub fn relative_transform(t_prev: &Pose, t_curr: &Pose) -> Pose {
    compose(t_curr, &invert(t_prev))
}

/// Change of coordinates between two camera stations: maps the coordinates
/// of a world-fixed point in `from`'s frame to its coordinates in `to`'s
/// frame (`invert(to) ∘ from`). This is the warp mask reprojection needs.
pub fn frame_change(from: &Pose, to: &Pose) -> Pose {
    compose(&invert(to), from)
}

/// Pinhole camera intrinsics (rectified, no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsWire", into = "IntrinsicsWire")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsWire {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<IntrinsicsWire> for Intrinsics {
    type Error = GeometryError;

    fn try_from(w: IntrinsicsWire) -> Result<Self, Self::Error> {
        Intrinsics::new(w.fx, w.fy, w.cx, w.cy, w.width, w.height)
    }
}

impl From<Intrinsics> for IntrinsicsWire {
    fn from(k: Intrinsics) -> Self {
        IntrinsicsWire { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive: fx={fx}, fy={fy}")));
        }
        if !(0.0 <= cx && cx < width as f64) || !(0.0 <= cy && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy, width, height })
    }

    fn in_bounds(&self, u: f64, v: f64) -> bool {
        0.0 <= u && u < self.width as f64 && 0.0 <= v && v < self.height as f64
    }
}

/// Lifts pixel `(u, v)` with a metric depth into the camera frame.
pub fn unproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Point3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !k.in_bounds(u, v) {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok(Point3::camera((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth))
}

/// Projects a camera-frame point to real-valued pixel coordinates.
/// The caller rounds; no image-bounds check is applied here.
pub fn project(p: &Point3, k: &Intrinsics) -> Result<(f64, f64), GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Transforms a camera-frame point into the map frame.
pub fn camera_to_map(p: &Point3, camera_pose: &Pose) -> Point3 {
    debug_assert_eq!(p.frame, Frame::Camera);
    Point3::from_vector(camera_pose.transform_vector(&p.vector()), Frame::Map)
}

/// Transforms a map-frame point into the camera frame.
pub fn map_to_camera(p: &Point3, camera_pose: &Pose) -> Point3 {
    debug_assert_eq!(p.frame, Frame::Map);
    Point3::from_vector(invert(camera_pose).transform_vector(&p.vector()), Frame::Camera)
}
