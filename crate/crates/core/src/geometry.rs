//! Frame-checked rigid-transform algebra.
//!
//! # Convention
//!
//! A [`FramedTransform`] with `from = A` and `to = B` is the transform
//! written `F^A_B`: the pose of frame `B` expressed in frame `A`. Applying
//! it to a point expressed in `B` yields the same point expressed in `A`,
//! so chains read left to right exactly as they are written:
//!
//! ```text
//! F^W_I = F^W_H · F^H_P · F^P_I      compose(compose(wh, hp), pi)
//! p_W   = F^W_I · p_I                wi.transform_point(&p_i)
//! ```
//!
//! Composition `compose(a, b)` requires `a.to == b.from` and yields
//! `a.from → b.to`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type UnitVector3 = Unit<Vector3<f64>>;

/// Tolerance on the quaternion norm accepted from external input before
/// renormalization.
pub const QUATERNION_INPUT_TOLERANCE: f64 = 1e-6;

/// Coordinate frames of the navigation system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameId {
    #[serde(rename = "W")]
    World,
    #[serde(rename = "H")]
    Hmd,
    #[serde(rename = "C")]
    Cannula,
    #[serde(rename = "P")]
    Patient,
    #[serde(rename = "I")]
    Image,
    #[serde(rename = "T")]
    Tracker,
    #[serde(rename = "M")]
    Machine,
    #[serde(rename = "tip")]
    Tip,
}

impl FrameId {
    pub const ALL: [FrameId; 8] = [
        FrameId::World,
        FrameId::Hmd,
        FrameId::Cannula,
        FrameId::Patient,
        FrameId::Image,
        FrameId::Tracker,
        FrameId::Machine,
        FrameId::Tip,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FrameId::World => "W",
            FrameId::Hmd => "H",
            FrameId::Cannula => "C",
            FrameId::Patient => "P",
            FrameId::Image => "I",
            FrameId::Tracker => "T",
            FrameId::Machine => "M",
            FrameId::Tip => "tip",
        }
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FrameId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrameId::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| Error::Parse(format!("unknown frame tag {s:?}")))
    }
}

/// Proper rigid motion: unit-quaternion rotation followed by a translation
/// in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    iso: Isometry3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            iso: Isometry3::from_parts(
                Translation3::from(translation),
                renormalize(rotation),
            ),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a transform from a `[w, x, y, z]` quaternion that has not been
    /// normalized yet.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_INPUT_TOLERANCE {
            return Err(Error::InvalidQuaternion { norm });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite translation".into()));
        }
        Ok(Self::new(
            UnitQuaternion::from_quaternion(raw),
            Vector3::from(t),
        ))
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self::new(iso.rotation, iso.translation.vector)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.iso.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.iso.translation.vector
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    /// `[w, x, y, z]`
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.iso.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        self.iso.to_homogeneous()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let iso = self.iso * other.iso;
        Self::new(iso.rotation, iso.translation.vector)
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.iso.inverse();
        Self::new(inv.rotation, inv.translation.vector)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.iso.transform_point(p)
    }

    /// Rotation only.
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * v
    }

    pub fn rotation_angle(&self) -> f64 {
        self.iso.rotation.angle()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

/// A rigid transform tagged with the frames it connects (see the module
/// docs for the direction convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedTransform {
    pub from: FrameId,
    pub to: FrameId,
    pub xf: RigidTransform,
}

impl FramedTransform {
    pub fn new(from: FrameId, to: FrameId, xf: RigidTransform) -> Self {
        Self { from, to, xf }
    }

    pub fn identity(frame: FrameId) -> Self {
        Self::new(frame, frame, RigidTransform::identity())
    }

    /// `self ∘ next`, giving `self.from → next.to`.
    pub fn compose(&self, next: &FramedTransform) -> Result<FramedTransform> {
        compose(self, next)
    }

    pub fn invert(&self) -> FramedTransform {
        invert(self)
    }

    /// Maps a point expressed in `self.to` into `self.from`.
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.xf.transform_point(p)
    }

    pub fn transform_direction(&self, d: &UnitVector3) -> UnitVector3 {
        Unit::new_normalize(self.xf.transform_vector(d.as_ref()))
    }

    pub fn transform_line(&self, line: &Line3) -> Line3 {
        Line3 {
            point: self.transform_point(&line.point),
            direction: self.transform_direction(&line.direction),
        }
    }

    /// Fails unless the transform connects exactly `from → to`.
    pub fn expect_frames(&self, from: FrameId, to: FrameId) -> Result<()> {
        if self.from != from {
            return Err(Error::FrameMismatch {
                left: from,
                right: self.from,
            });
        }
        if self.to != to {
            return Err(Error::FrameMismatch {
                left: self.to,
                right: to,
            });
        }
        Ok(())
    }
}

pub fn compose(a: &FramedTransform, b: &FramedTransform) -> Result<FramedTransform> {
    if a.to != b.from {
        return Err(Error::FrameMismatch {
            left: a.to,
            right: b.from,
        });
    }
    Ok(FramedTransform::new(a.from, b.to, a.xf.compose(&b.xf)))
}

/// Composes a chain left to right, checking every junction.
pub fn compose_chain(chain: &[&FramedTransform]) -> Result<FramedTransform> {
    let (first, rest) = chain
        .split_first()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    rest.iter()
        .try_fold(**first, |acc, next| compose(&acc, next))
}

pub fn invert(a: &FramedTransform) -> FramedTransform {
    FramedTransform::new(a.to, a.from, a.xf.inverse())
}

pub fn transform_point(a: &FramedTransform, p: &Point3<f64>) -> Point3<f64> {
    a.transform_point(p)
}

/// How [`angle_between`] treats opposite vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleMode {
    /// Plain angle in `[0, 180]`.
    Directed,
    /// `min(θ, 180 − θ)`, for axes with no intrinsic forward sign.
    Axis,
}

/// Angle between two directions in degrees.
pub fn angle_between(u: &Vector3<f64>, v: &Vector3<f64>, mode: AngleMode) -> Result<f64> {
    let u = Unit::try_new(*u, 1e-12).ok_or(Error::ZeroVector)?;
    let v = Unit::try_new(*v, 1e-12).ok_or(Error::ZeroVector)?;
    let theta = u.cross(&v).norm().atan2(u.dot(&v)).to_degrees();
    Ok(match mode {
        AngleMode::Directed => theta,
        AngleMode::Axis => theta.min(180.0 - theta),
    })
}

/// Infinite line through `point` along a unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Point3<f64>,
    pub direction: UnitVector3,
}

impl Line3 {
    pub fn new(point: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let direction = Unit::try_new(direction, 1e-12).ok_or(Error::ZeroVector)?;
        Ok(Self { point, direction })
    }

    /// Line through `a` pointing towards `b`.
    pub fn through(a: Point3<f64>, b: Point3<f64>) -> Result<Self> {
        Self::new(a, b - a)
    }

    pub fn at(&self, s: f64) -> Point3<f64> {
        self.point + self.direction.as_ref() * s
    }

    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        self.at((p - self.point).dot(&self.direction))
    }

    pub fn distance_to(&self, p: &Point3<f64>) -> f64 {
        (p - self.project(p)).norm()
    }

    /// Intersection with the plane through `anchor` with unit `normal`, or
    /// `None` when the line is parallel to the plane.
    pub fn intersect_plane(&self, anchor: &Point3<f64>, normal: &UnitVector3) -> Option<Point3<f64>> {
        let denom = self.direction.dot(normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = (anchor - self.point).dot(normal) / denom;
        Some(self.at(s))
    }
}

#[derive(Serialize, Deserialize)]
struct TransformLiteral {
    from: FrameId,
    to: FrameId,
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for FramedTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let t = self.xf.translation();
        TransformLiteral {
            from: self.from,
            to: self.to,
            q: self.xf.wxyz(),
            t: [t.x, t.y, t.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FramedTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let lit = TransformLiteral::deserialize(deserializer)?;
        let xf = RigidTransform::from_wxyz(lit.q, lit.t).map_err(serde::de::Error::custom)?;
        Ok(FramedTransform::new(lit.from, lit.to, xf))
    }
}
