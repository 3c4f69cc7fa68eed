//! Synthetic rigid motions, pivot datasets and point sets.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::calibration::PivotDataset;
use crate::geometry::RigidTransform;
use crate::simulation::noise::gaussian_vector;

/// Haar-uniform rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q)
}

/// Uniform rotation with translation uniform in `[-scale, scale)^3`.
pub fn random_transform<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> RigidTransform {
    let t = random_point(rng, scale).coords;
    RigidTransform::new(random_rotation(rng), t)
}

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Point3<f64> {
    Point3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotProtocol {
    /// Tip in the marker-body frame, mm.
    pub tip_offset: Point3<f64>,
    /// Fixed pivot in the tracker frame, mm.
    pub pivot_point: Point3<f64>,
    pub poses: usize,
    /// Tool tilt from the tracker z axis is uniform in `[0, max_tilt_deg]`.
    pub max_tilt_deg: f64,
    /// Per-axis std of Gaussian noise added to each pose translation, mm.
    pub translation_noise: f64,
}

impl Default for PivotProtocol {
    fn default() -> Self {
        Self {
            tip_offset: Point3::new(0.0, 0.0, 150.0),
            pivot_point: Point3::new(0.0, 0.0, -1000.0),
            poses: 100,
            max_tilt_deg: 30.0,
            translation_noise: 0.0,
        }
    }
}

/// Poses of a tool pivoting about `pivot_point`: random tilt about a
/// horizontal axis, random spin about the shaft.
pub fn pivot_poses<R: Rng + ?Sized>(protocol: &PivotProtocol, rng: &mut R) -> Vec<RigidTransform> {
    (0..protocol.poses)
        .map(|_| {
            let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt_axis = nalgebra::Unit::new_normalize(Vector3::new(azimuth.cos(), azimuth.sin(), 0.0));
            let tilt = rng.random_range(0.0..=protocol.max_tilt_deg).to_radians();
            let spin = rng.random_range(0.0..std::f64::consts::TAU);
            let r = UnitQuaternion::from_axis_angle(&tilt_axis, tilt) * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), spin);
            let t = protocol.pivot_point.coords - r * protocol.tip_offset.coords + gaussian_vector(rng, protocol.translation_noise);
            RigidTransform::new(r, t)
        })
        .collect()
}

/// Panics if `protocol.poses` is below the dataset minimum.
pub fn pivot_dataset<R: Rng + ?Sized>(protocol: &PivotProtocol, rng: &mut R) -> PivotDataset {
    PivotDataset::new(pivot_poses(protocol, rng)).expect("protocol has enough poses")
}
