//! Run-time guidance loop: pose stream in, gated indicator geometry out.
//!
//! The stream carries `W→H` (headset in world), `H→C` (tool) and `H→P`
//! (patient array) samples. Indicators are emitted once per distinct
//! timestamp while navigation is active.

use crate::error::{Error, Result};
use crate::geometry::{FrameId, FramedTransform, Line3};
use crate::navigation::{error_indicator, tool_axis_world, world_trajectory, IndicatorGeometry, TrajectoryPlan};
use crate::tracking::{FilterParams, NavGate, NavStatus, PoseFilter, PoseSample};

#[derive(Debug, Clone)]
pub struct GuidanceSetup {
    pub plan: TrajectoryPlan,
    /// Patient-to-image registration, `P→I`.
    pub f_pi: FramedTransform,
    /// Calibrated shaft axis in the cannula frame.
    pub shaft: Line3,
    pub grace: f64,
    /// Smooth tool and patient poses before use.
    pub filter: Option<FilterParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceFrame {
    pub t: f64,
    pub geometry: IndicatorGeometry,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceReport {
    pub frames: Vec<GuidanceFrame>,
    /// Timestamps dropped because navigation was suspended.
    pub suspended: usize,
    /// Active timestamps without a pose for every body yet.
    pub incomplete: usize,
    /// Active timestamps where the tool line missed an indicator plane.
    pub no_intersection: usize,
}

struct Body {
    latest: Option<FramedTransform>,
    filter: Option<PoseFilter>,
}

impl Body {
    fn new(filter: Option<FilterParams>) -> Self {
        Self {
            latest: None,
            filter: filter.map(PoseFilter::new),
        }
    }

    fn push(&mut self, s: &PoseSample) -> Result<()> {
        if !s.valid {
            return Ok(());
        }
        self.latest = Some(match &mut self.filter {
            Some(f) => f.push(s)?.expect("valid sample initializes the filter").pose,
            None => s.pose,
        });
        Ok(())
    }
}

/// `samples` must be time-ordered, as produced by the pose-stream reader.
pub fn run_guidance(setup: &GuidanceSetup, samples: &[PoseSample]) -> Result<GuidanceReport> {
    setup.f_pi.expect_frames(FrameId::Patient, FrameId::Image)?;
    let mut gate = NavGate::new(setup.grace)?;
    let mut headset = Body::new(None);
    let mut tool = Body::new(setup.filter);
    let mut patient = Body::new(setup.filter);
    let mut report = GuidanceReport::default();

    let mut i = 0;
    while i < samples.len() {
        let t = samples[i].t;
        let (mut tool_seen, mut patient_seen) = (false, false);
        while i < samples.len() && samples[i].t == t {
            let s = &samples[i];
            match (s.pose.from, s.pose.to) {
                (FrameId::World, FrameId::Hmd) => headset.push(s)?,
                (FrameId::Hmd, FrameId::Cannula) => {
                    tool.push(s)?;
                    tool_seen |= s.valid;
                }
                (FrameId::Hmd, FrameId::Patient) => {
                    patient.push(s)?;
                    patient_seen |= s.valid;
                }
                (from, to) => {
                    return Err(Error::InvalidParameter(format!(
                        "pose stream has unexpected frame pair {from}->{to}; expected W->H, H->C or H->P"
                    )))
                }
            }
            i += 1;
        }
        if i < samples.len() && samples[i].t < t {
            return Err(Error::TimestampOrder { last: t, got: samples[i].t });
        }

        if gate.observe(t, tool_seen, patient_seen).state == NavStatus::Suspended {
            report.suspended += 1;
            continue;
        }
        let (Some(wh), Some(hc), Some(hp)) = (headset.latest, tool.latest, patient.latest) else {
            report.incomplete += 1;
            continue;
        };
        let target = world_trajectory(&wh, &hp, &setup.f_pi, &setup.plan)?;
        let axis = tool_axis_world(&wh, &hc, &setup.shaft)?;
        match error_indicator(&axis, &target.entry, &target.exit) {
            Ok(geometry) => report.frames.push(GuidanceFrame { t, geometry }),
            Err(Error::NoIntersection { .. }) => report.no_intersection += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
