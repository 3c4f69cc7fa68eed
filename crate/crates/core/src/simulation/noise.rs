//! Noise-injection primitives.

use nalgebra::{Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{FramedTransform, RigidTransform, UnitVector3};

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * std
}

pub fn gaussian_vector2<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vector2<f64> {
    Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * std
}

/// Uniformly distributed direction.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> UnitVector3 {
    loop {
        if let Some(u) = Unit::try_new(gaussian_vector(rng, 1.0), 1e-9) {
            return u;
        }
    }
}

/// Rotation about a uniformly random axis by a Gaussian angle.
pub fn small_rotation<R: Rng + ?Sized>(rng: &mut R, std_deg: f64) -> UnitQuaternion<f64> {
    let axis = random_unit(rng);
    let angle = rng.sample::<f64, _>(StandardNormal) * std_deg.to_radians();
    UnitQuaternion::from_axis_angle(&axis, angle)
}

/// Adds isotropic Gaussian translation noise (per-axis `trans_std`) and
/// right-composes a random-axis rotation with Gaussian angle `rot_std_deg`.
/// Frame tags are kept.
pub fn perturb<R: Rng + ?Sized>(xf: &FramedTransform, trans_std: f64, rot_std_deg: f64, rng: &mut R) -> FramedTransform {
    FramedTransform::new(xf.from, xf.to, perturb_rigid(&xf.xf, trans_std, rot_std_deg, rng))
}

pub fn perturb_rigid<R: Rng + ?Sized>(xf: &RigidTransform, trans_std: f64, rot_std_deg: f64, rng: &mut R) -> RigidTransform {
    if trans_std == 0.0 && rot_std_deg == 0.0 {
        return *xf;
    }
    let dt = gaussian_vector(rng, trans_std);
    let dr = small_rotation(rng, rot_std_deg);
    RigidTransform::new(xf.rotation() * dr, xf.translation() + dt)
}
