//! Simulated K-wire insertions under three tool-mounting modes.
//!
//! All geometry is expressed in phantom (image) coordinates. Display error
//! is the rigid map from true to displayed positions induced by perturbing
//! the registration chain; tool error is the tracked-minus-actual tool pose.
//!
//! A trial proceeds as follows:
//! 1. pick corridor `trial % 9`;
//! 2. choose the skin incision, either from the displayed line or from the
//!    surface marker on a synthetic skin cloud;
//! 3. tracked modes pivot the tool about the incision, reducing the tracked
//!    indicator radii; the non-tracked mode aims once at the displayed line;
//! 4. the wire departs from the guided axis by re-angling deflection and
//!    skating, both scaled by the stiffness factor;
//! 5. the wire is scored against the true corridor.

use std::fmt;

use nalgebra::{Point3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, compose_chain, AngleMode, Line3, RigidTransform, UnitVector3};
use crate::metrics::{placement_error, PlacementError};
use crate::navigation::{plane_offset, surface_marker, PointCloud};
use crate::simulation::config::{BendingModel, DepthSensorModel, NoiseBudget, OperatorModel, StudyConfig};
use crate::simulation::e2e::Scene;
use crate::simulation::noise::{gaussian_vector, gaussian_vector2, perturb, perturb_rigid};
use crate::simulation::phantom::PhantomSpec;
use crate::simulation::{trial_rng, Execution};

/// Distance from the skin incision to the tool's marker body, mm.
pub const TOOL_LEVER_MM: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    NonTracked,
    DrillMounted,
    Cannula,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 3] = [GuidanceMode::NonTracked, GuidanceMode::DrillMounted, GuidanceMode::Cannula];

    pub fn label(self) -> &'static str {
        match self {
            GuidanceMode::NonTracked => "Non-tracked",
            GuidanceMode::DrillMounted => "Drill-mounted",
            GuidanceMode::Cannula => "Cannula",
        }
    }

    fn is_tracked(self) -> bool {
        self != GuidanceMode::NonTracked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub mode: GuidanceMode,
    pub surface_marker: bool,
}

impl Condition {
    /// Three modes without the marker, then three with it.
    pub fn all() -> Vec<Condition> {
        [false, true]
            .into_iter()
            .flat_map(|surface_marker| GuidanceMode::ALL.map(|mode| Condition { mode, surface_marker }))
            .collect()
    }

    /// Stream salt; distinct per condition so conditions are independent
    /// samples.
    fn salt(self) -> u64 {
        1 + self.mode as u64 + 3 * self.surface_marker as u64
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.surface_marker {
            write!(f, "{} + marker", self.mode.label())
        } else {
            f.write_str(self.mode.label())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionModels {
    pub budget: NoiseBudget,
    pub operator: OperatorModel,
    pub bending: BendingModel,
    pub depth: DepthSensorModel,
}

impl From<&StudyConfig> for InsertionModels {
    fn from(c: &StudyConfig) -> Self {
        Self {
            budget: c.budget,
            operator: c.operator,
            bending: c.bending,
            depth: c.depth,
        }
    }
}

impl InsertionModels {
    fn stiffness(&self, mode: GuidanceMode) -> f64 {
        match mode {
            GuidanceMode::Cannula => self.bending.cannula_stiffness,
            _ => self.bending.wire_stiffness,
        }
    }
}

fn basis(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = u.cross(&helper).normalize();
    (e1, u.cross(&e1))
}

fn in_plane(u: &Vector3<f64>, v: Vector2<f64>) -> Vector3<f64> {
    let (e1, e2) = basis(u);
    e1 * v.x + e2 * v.y
}

/// `u` tilted by a small Gaussian angle about a random perpendicular axis.
fn jitter_direction<R: Rng + ?Sized>(u: &Vector3<f64>, std_deg: f64, rng: &mut R) -> Vector3<f64> {
    let d = in_plane(u, gaussian_vector2(rng, std_deg.to_radians()));
    (u + d).normalize()
}

fn skin_crossing(line: &Line3) -> Point3<f64> {
    line.intersect_plane(&Point3::origin(), &Vector3::z_axis())
        .expect("trajectories are within 15 degrees of vertical")
}

/// Tracked tool line for an actual tool through `pivot` along `u` (pointing
/// out of the body). `marker_error` is applied in the tool body frame and
/// `calibration_error` shifts the calibrated shaft in that frame.
fn tracked_line(pivot: &Point3<f64>, u: &Vector3<f64>, marker_error: &RigidTransform, calibration_error: &Vector3<f64>) -> Line3 {
    let r = UnitQuaternion::rotation_between(&Vector3::z(), u).unwrap_or_else(UnitQuaternion::identity);
    let pose = RigidTransform::new(r, pivot.coords + u * TOOL_LEVER_MM);
    let tracked = pose.compose(marker_error);
    let shaft_point = Point3::new(0.0, 0.0, -TOOL_LEVER_MM) + calibration_error;
    Line3 {
        point: tracked.transform_point(&shaft_point),
        direction: Unit::new_normalize(tracked.transform_vector(&Vector3::z())),
    }
}

struct TrialContext<'a> {
    phantom: &'a PhantomSpec,
    scene: &'a Scene,
    models: &'a InsertionModels,
    condition: Condition,
}

impl TrialContext<'_> {
    fn display_error<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RigidTransform> {
        let b = &self.models.budget;
        let s = self.scene;
        let nominal = compose_chain(&[&s.f_wh, &s.f_hp, &s.f_pi])?;
        let wh = perturb(&s.f_wh, b.slam_trans_mm, b.slam_rot_deg, rng);
        let hp = perturb(&s.f_hp, b.patient_track_trans_mm, b.patient_track_rot_deg, rng);
        let pi = perturb(&s.f_pi, b.ctreg_trans_mm, b.ctreg_rot_deg, rng);
        let shown = compose_chain(&[&wh, &hp, &pi])?;
        Ok(nominal.xf.inverse().compose(&shown.xf))
    }

    fn marker_incision<R: Rng + ?Sized>(&self, axis: &Line3, true_crossing: &Point3<f64>, rng: &mut R) -> Result<Point3<f64>> {
        let d = &self.models.depth;
        let steps = (d.cloud_half_width_mm / d.cloud_spacing_mm).floor() as i32;
        let mut points = Vec::with_capacity(((2 * steps + 1) * (2 * steps + 1)) as usize);
        for i in -steps..=steps {
            for j in -steps..=steps {
                let z = d.depth_noise_mm * rng.sample::<f64, _>(rand_distr::StandardNormal);
                points.push(Point3::new(
                    true_crossing.x + i as f64 * d.cloud_spacing_mm,
                    true_crossing.y + j as f64 * d.cloud_spacing_mm,
                    z,
                ));
            }
        }
        let marker = surface_marker(&PointCloud::new(points)?, axis, d.neighbors)?;
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let bias = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0) * d.marker_bias_mm;
        Ok(Point3::new(marker.position.x, marker.position.y, 0.0) + bias)
    }

    fn run<R: Rng + ?Sized>(&self, trial: usize, rng: &mut R) -> Result<PlacementError> {
        let op = &self.models.operator;
        let budget = &self.models.budget;
        let bending = &self.models.bending;
        let corridor = self.phantom.corridors[trial % self.phantom.corridors.len()];

        let display = self.display_error(rng)?;
        let shown_entry = display.transform_point(&corridor.entry);
        let shown_exit = display.transform_point(&corridor.exit);
        let shown_axis = Line3::through(shown_exit, shown_entry)?;
        let n: UnitVector3 = shown_axis.direction;

        let marker_error = perturb_rigid(&RigidTransform::identity(), budget.tool_track_trans_mm, budget.tool_track_rot_deg, rng);
        let calibration_error = gaussian_vector(rng, budget.pivot_mm);
        let placement = gaussian_vector2(rng, 1.0);

        let mode = self.condition.mode;
        let incision = if self.condition.surface_marker {
            let true_crossing = skin_crossing(&Line3::through(corridor.exit, corridor.entry)?);
            self.marker_incision(&shown_axis, &true_crossing, rng)? + in_plane(&Vector3::z(), placement * op.residual_mm)
        } else {
            let spread = if mode.is_tracked() { op.residual_mm } else { op.non_tracked_residual_mm };
            skin_crossing(&shown_axis) + in_plane(&Vector3::z(), placement * spread)
        };

        let (initial, guided) = if mode.is_tracked() {
            let initial = jitter_direction(&n, op.initial_aim_deg, rng);
            let mut u = initial;
            let h_entry = (incision - shown_entry).dot(&n);
            let h_exit = (incision - shown_exit).dot(&n);
            for _ in 0..op.iterations {
                let tracked = tracked_line(&incision, &u, &marker_error, &calibration_error);
                let off_entry = plane_offset(&tracked, &shown_entry, &n);
                let off_exit = plane_offset(&tracked, &shown_exit, &n);
                if off_entry.norm() < op.convergence_mm && off_exit.norm() < op.convergence_mm {
                    break;
                }
                let step = (off_entry * h_entry + off_exit * h_exit) / (h_entry * h_entry + h_exit * h_exit);
                u = jitter_direction(&(u + step * op.gain).normalize(), op.residual_deg, rng);
            }
            (initial, u)
        } else {
            let u = jitter_direction(&n, op.non_tracked_residual_deg, rng);
            (u, u)
        };

        let stiffness = self.models.stiffness(mode);
        let reangle = initial - guided;
        let reangle_perp = reangle - guided * reangle.dot(&guided);
        let tissue = if reangle_perp.norm() > 1e-12 {
            let deg = angle_between(&initial, &guided, AngleMode::Directed)?;
            -reangle_perp.normalize() * (bending.tissue_gain_mm_per_deg * deg)
        } else {
            Vector3::zeros()
        };
        let skate = in_plane(&guided, gaussian_vector2(rng, bending.skate_std_mm));
        let deviation = (tissue + skate) * stiffness;

        let guide_line = Line3::new(incision, guided)?;
        let true_axis = Unit::new_normalize(corridor.entry - corridor.exit);
        let at_entry = guide_line.intersect_plane(&corridor.entry, &true_axis).ok_or(Error::NoIntersection { angle_deg: 90.0 })?;
        let at_exit = guide_line.intersect_plane(&corridor.exit, &true_axis).ok_or(Error::NoIntersection { angle_deg: 90.0 })?;
        let wire = Line3::through(at_exit + deviation * bending.distal_carryover, at_entry + deviation)?;
        placement_error(&corridor.entry, &corridor.exit, &wire)
    }
}

/// Placement errors of `trials` insertions, in trial order. Each trial owns
/// the stream `(seed, condition, trial)`, so serial and parallel execution
/// agree exactly.
pub fn simulate_insertion(
    phantom: &PhantomSpec,
    condition: Condition,
    models: &InsertionModels,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<PlacementError>> {
    if trials < 1 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if phantom.corridors.is_empty() {
        return Err(Error::InvalidParameter("phantom has no corridors".into()));
    }
    let scene = Scene::nominal(vec![Point3::origin()])?;
    let ctx = TrialContext {
        phantom,
        scene: &scene,
        models,
        condition,
    };
    let one = |trial: usize| ctx.run(trial, &mut trial_rng(seed, condition.salt(), trial));
    match exec {
        Execution::Serial => (0..trials).map(one).collect(),
        Execution::Parallel => (0..trials).into_par_iter().map(one).collect(),
    }
}
