//! Synthetic phantom: nine bone corridors under a slab of soft tissue.
//!
//! Phantom coordinates coincide with the image frame. The skin is the plane
//! z = 0 and bone entry points lie `tissue_depth_mm` below it.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CORRIDOR_COUNT: usize = 9;
pub const CORRIDOR_LENGTH_MM: f64 = 100.0;
pub const MAX_TILT_DEG: f64 = 15.0;
pub const TISSUE_DEPTH_MM: f64 = 20.0;
pub const GRID_SPACING_MM: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub entry: Point3<f64>,
    pub exit: Point3<f64>,
    pub tilt_deg: f64,
}

impl Corridor {
    /// Unit axis from exit towards entry.
    pub fn axis(&self) -> Vector3<f64> {
        (self.entry - self.exit).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub tissue_depth_mm: f64,
    pub corridors: Vec<Corridor>,
}

impl PhantomSpec {
    pub fn skin_z(&self) -> f64 {
        0.0
    }
}

/// Corridor whose entry is `entry` and whose axis is tilted from vertical by
/// a uniform angle in `[0, MAX_TILT_DEG)` at a uniform azimuth.
pub fn random_corridor<R: Rng + ?Sized>(entry: Point3<f64>, rng: &mut R) -> Corridor {
    let tilt_deg = rng.random_range(0.0..MAX_TILT_DEG);
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let (st, ct) = tilt_deg.to_radians().sin_cos();
    let down = Vector3::new(st * azimuth.cos(), st * azimuth.sin(), -ct);
    Corridor {
        entry,
        exit: entry + down * CORRIDOR_LENGTH_MM,
        tilt_deg,
    }
}

pub fn generate_phantom(seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corridors = (0..CORRIDOR_COUNT)
        .map(|i| {
            let x = ((i % 3) as f64 - 1.0) * GRID_SPACING_MM;
            let y = ((i / 3) as f64 - 1.0) * GRID_SPACING_MM;
            random_corridor(Point3::new(x, y, -TISSUE_DEPTH_MM), &mut rng)
        })
        .collect();
    PhantomSpec {
        seed,
        tissue_depth_mm: TISSUE_DEPTH_MM,
        corridors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_between, AngleMode};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_phantom(7), generate_phantom(7));
        assert_ne!(generate_phantom(7).corridors, generate_phantom(8).corridors);
    }

    #[test]
    fn nine_corridors_of_fixed_length() {
        let p = generate_phantom(1);
        assert_eq!(p.corridors.len(), CORRIDOR_COUNT);
        for c in &p.corridors {
            assert!(((c.entry - c.exit).norm() - CORRIDOR_LENGTH_MM).abs() < 1e-9);
            assert_eq!(c.entry.z, -TISSUE_DEPTH_MM);
            let tilt = angle_between(&c.axis(), &Vector3::z(), AngleMode::Directed).unwrap();
            assert!((tilt - c.tilt_deg).abs() < 1e-9);
        }
    }

    #[test]
    fn tilt_bound_over_many_corridors() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let max = (0..10_000)
            .map(|_| random_corridor(Point3::origin(), &mut rng).tilt_deg)
            .fold(0.0, f64::max);
        assert!(max < MAX_TILT_DEG);
        assert!(max > 14.0);
    }
}
