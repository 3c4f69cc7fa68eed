//! Guidance geometry: desired trajectory in world coordinates, tracked tool
//! axis, error-indicator circles and the skin-surface insertion marker.
//!
//! Indicator circles live in the planes orthogonal to the desired axis
//! through the planned entry and exit points. The trajectory axis points
//! from the exit towards the entry (`n = p_entry − p_exit`).

use nalgebra::{Matrix3, Point3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, compose_chain, AngleMode, FrameId, FramedTransform, Line3, UnitVector3};

/// Minimum entry–exit separation of a plan, mm.
pub const MIN_PLAN_LENGTH: f64 = 1.0;

/// Tool lines deviating more than this from the desired axis have no
/// usable intersection with the indicator planes.
pub const MAX_AXIS_DEVIATION_DEG: f64 = 89.0;

/// Radii below this are treated as zero and carry no hatch direction.
pub const ZERO_RADIUS: f64 = 1e-9;

/// Default neighborhood size for surface-normal estimation.
pub const DEFAULT_NEIGHBORS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPlan {
    entry: Point3<f64>,
    exit: Point3<f64>,
}

impl TrajectoryPlan {
    /// Entry and exit in image coordinates, mm.
    pub fn new(entry: Point3<f64>, exit: Point3<f64>) -> Result<Self> {
        let len = (entry - exit).norm();
        if len.is_nan() || len <= MIN_PLAN_LENGTH {
            return Err(Error::InvalidParameter(format!(
                "plan entry and exit are {len:.3} mm apart; need more than {MIN_PLAN_LENGTH} mm"
            )));
        }
        Ok(Self { entry, exit })
    }

    pub fn entry(&self) -> Point3<f64> {
        self.entry
    }

    pub fn exit(&self) -> Point3<f64> {
        self.exit
    }

    pub fn length(&self) -> f64 {
        (self.entry - self.exit).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldTrajectory {
    pub entry: Point3<f64>,
    pub exit: Point3<f64>,
    /// Through `entry`, pointing from exit to entry.
    pub axis: Line3,
}

/// Maps the planned entry/exit from image to world through
/// `F^W_H · F^H_P · F^P_I`.
pub fn world_trajectory(
    f_wh: &FramedTransform,
    f_hp: &FramedTransform,
    f_pi: &FramedTransform,
    plan: &TrajectoryPlan,
) -> Result<WorldTrajectory> {
    f_wh.expect_frames(FrameId::World, FrameId::Hmd)?;
    f_hp.expect_frames(FrameId::Hmd, FrameId::Patient)?;
    f_pi.expect_frames(FrameId::Patient, FrameId::Image)?;
    let f_wi = compose_chain(&[f_wh, f_hp, f_pi])?;
    let entry = f_wi.transform_point(&plan.entry);
    let exit = f_wi.transform_point(&plan.exit);
    Ok(WorldTrajectory {
        entry,
        exit,
        axis: Line3::new(entry, entry - exit)?,
    })
}

/// Maps the calibrated shaft axis from the cannula frame into world through
/// `F^W_H · F^H_C`.
pub fn tool_axis_world(f_wh: &FramedTransform, f_hc: &FramedTransform, shaft: &Line3) -> Result<Line3> {
    f_wh.expect_frames(FrameId::World, FrameId::Hmd)?;
    f_hc.expect_frames(FrameId::Hmd, FrameId::Cannula)?;
    let f_wc = compose_chain(&[f_wh, f_hc])?;
    Ok(f_wc.transform_line(shaft))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorCircle {
    pub center: Point3<f64>,
    pub radius: f64,
    /// Unit correction direction from the tool's crossing towards the
    /// center; `None` when the radius is zero.
    pub hatch: Option<UnitVector3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorGeometry {
    pub entry: IndicatorCircle,
    pub end: IndicatorCircle,
}

/// In-plane offset of the line's crossing of the plane through `anchor`
/// orthogonal to `normal`, measured from the anchor.
pub(crate) fn plane_offset(line: &Line3, anchor: &Point3<f64>, normal: &UnitVector3) -> Vector3<f64> {
    let hit = line
        .intersect_plane(anchor, normal)
        .expect("caller checks the axis-deviation guard");
    let off = hit - anchor;
    off - normal.as_ref() * off.dot(normal)
}

pub(crate) fn guard_deviation(line: &Line3, axis: &UnitVector3) -> Result<f64> {
    let angle = angle_between(&line.direction, axis, AngleMode::Axis)?;
    if angle > MAX_AXIS_DEVIATION_DEG {
        return Err(Error::NoIntersection { angle_deg: angle });
    }
    Ok(angle)
}

fn circle(tool: &Line3, anchor: Point3<f64>, normal: &UnitVector3) -> IndicatorCircle {
    let off = plane_offset(tool, &anchor, normal);
    let radius = off.norm();
    IndicatorCircle {
        center: anchor,
        radius,
        hatch: (radius >= ZERO_RADIUS).then(|| Unit::new_normalize(-off)),
    }
}

/// Entry and end circles for a tracked tool line against the desired
/// trajectory from `entry_w` to `exit_w`.
pub fn error_indicator(tool: &Line3, entry_w: &Point3<f64>, exit_w: &Point3<f64>) -> Result<IndicatorGeometry> {
    let axis = Unit::try_new(entry_w - exit_w, 1e-12).ok_or(Error::ZeroVector)?;
    guard_deviation(tool, &axis)?;
    Ok(IndicatorGeometry {
        entry: circle(tool, *entry_w, &axis),
        end: circle(tool, *exit_w, &axis),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMarker {
    pub position: Point3<f64>,
    pub normal: UnitVector3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParameter("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn lex_cmp(a: &Point3<f64>, b: &Point3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Skin insertion point: the cloud point nearest the desired axis, with a
/// plane normal fitted to its `k` nearest neighbors (fewer if the cloud is
/// smaller).
///
/// The normal is oriented towards the tool side, i.e. along the axis
/// direction, which points out of the body from exit to entry.
pub fn surface_marker(cloud: &PointCloud, axis: &Line3, k: usize) -> Result<SurfaceMarker> {
    let position = *cloud
        .points
        .iter()
        .min_by(|a, b| {
            axis.distance_to(a)
                .total_cmp(&axis.distance_to(b))
                .then_with(|| lex_cmp(a, b))
        })
        .ok_or(Error::EmptyCloud)?;

    let k = k.min(cloud.len());
    if k < 3 {
        return Err(Error::InsufficientData { needed: 3, got: k });
    }
    let mut ranked: Vec<(f64, Point3<f64>)> = cloud
        .points
        .iter()
        .map(|p| ((p - position).norm_squared(), *p))
        .collect();
    let by_distance = |a: &(f64, Point3<f64>), b: &(f64, Point3<f64>)| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_distance);

    let centroid = ranked.iter().fold(Vector3::zeros(), |acc, (_, p)| acc + p.coords) / k as f64;
    let covariance = ranked.iter().fold(Matrix3::zeros(), |acc, (_, p)| {
        let d = p.coords - centroid;
        acc + d * d.transpose()
    }) / k as f64;
    let eig = covariance.symmetric_eigen();
    let (i_min, _) = eig.eigenvalues.argmin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(i_min).into_owned();
    let facing = normal.dot(&axis.direction);
    if facing < 0.0 || (facing == 0.0 && lex_cmp(&Point3::from(normal), &Point3::origin()).is_lt()) {
        normal = -normal;
    }
    Ok(SurfaceMarker {
        position,
        normal: Unit::new_normalize(normal),
    })
}
