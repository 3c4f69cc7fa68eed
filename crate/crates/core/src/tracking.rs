//! Pose-stream conditioning: error-state Kalman filtering, inter-frame
//! interpolation and track-loss gating.
//!
//! The filter tracks position and velocity under a constant-velocity model
//! and orientation as a random walk. Orientation errors live in a 3-vector
//! tangent space (`q = q̂ · exp(δθ)`), so the estimate never leaves the unit
//! sphere.

use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{FramedTransform, RigidTransform};

type Mat9 = SMatrix<f64, 9, 9>;
type Mat6 = SMatrix<f64, 6, 6>;
type Mat6x9 = SMatrix<f64, 6, 9>;
type Vec9 = SVector<f64, 9>;
type Vec6 = SVector<f64, 6>;

/// Default dropout grace period before navigation is suspended, seconds.
pub const DEFAULT_GRACE_S: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub pose: FramedTransform,
    pub valid: bool,
}

/// Noise model of the pose filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// White-acceleration spectral density, (mm/s²)²·s.
    pub accel_psd: f64,
    /// Angular random-walk spectral density, rad²/s.
    pub rotation_psd: f64,
    /// Per-axis measurement std of translation, mm.
    pub translation_std: f64,
    /// Per-axis measurement std of orientation, rad.
    pub rotation_std: f64,
    /// Prior std of the velocity at initialization, mm/s.
    pub initial_velocity_std: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            accel_psd: 1.0e4,
            rotation_psd: 1.0e-3,
            translation_std: 1.0,
            rotation_std: 0.5f64.to_radians(),
            initial_velocity_std: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub pose: FramedTransform,
    /// mm/s
    pub velocity: Vector3<f64>,
    /// Error-state covariance ordered `[δp, δv, δθ]`.
    pub covariance: Mat9,
    pub t: f64,
}

impl FilterState {
    pub fn initialize(sample: &PoseSample, params: &FilterParams) -> Self {
        let mut covariance = Mat9::zeros();
        for i in 0..3 {
            covariance[(i, i)] = params.translation_std.powi(2);
            covariance[(3 + i, 3 + i)] = params.initial_velocity_std.powi(2);
            covariance[(6 + i, 6 + i)] = params.rotation_std.powi(2);
        }
        Self {
            pose: sample.pose,
            velocity: Vector3::zeros(),
            covariance,
            t: sample.t,
        }
    }

    pub fn translation_variance(&self) -> f64 {
        (0..3).map(|i| self.covariance[(i, i)]).sum()
    }
}

fn measurement_matrix() -> Mat6x9 {
    let mut h = Mat6x9::zeros();
    for i in 0..3 {
        h[(i, i)] = 1.0;
        h[(3 + i, 6 + i)] = 1.0;
    }
    h
}

/// Propagates the state to `t` without a measurement.
pub fn predict(state: &FilterState, t: f64, params: &FilterParams) -> Result<FilterState> {
    let dt = t - state.t;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::TimestampOrder {
            last: state.t,
            got: t,
        });
    }
    let mut f = Mat9::identity();
    for i in 0..3 {
        f[(i, 3 + i)] = dt;
    }
    let mut q = Mat9::zeros();
    let qa = params.accel_psd;
    for i in 0..3 {
        q[(i, i)] = qa * dt.powi(3) / 3.0;
        q[(i, 3 + i)] = qa * dt.powi(2) / 2.0;
        q[(3 + i, i)] = qa * dt.powi(2) / 2.0;
        q[(3 + i, 3 + i)] = qa * dt;
        q[(6 + i, 6 + i)] = params.rotation_psd * dt;
    }
    let covariance = f * state.covariance * f.transpose() + q;
    let translation = state.pose.xf.translation() + state.velocity * dt;
    Ok(FilterState {
        pose: FramedTransform::new(
            state.pose.from,
            state.pose.to,
            RigidTransform::new(*state.pose.xf.rotation(), translation),
        ),
        velocity: state.velocity,
        covariance: symmetrize(covariance),
        t,
    })
}

fn symmetrize(m: Mat9) -> Mat9 {
    (m + m.transpose()) * 0.5
}

/// Rotation from `a` to `b` in `a`'s tangent space, along the shorter arc.
fn rotation_delta(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut d = a.inverse() * b;
    if d.w < 0.0 {
        d = UnitQuaternion::new_unchecked(-d.into_inner());
    }
    d.scaled_axis()
}

/// One predict/update cycle with a valid pose measurement.
pub fn kalman_update(
    state: &FilterState,
    sample: &PoseSample,
    params: &FilterParams,
) -> Result<FilterState> {
    if !sample.valid {
        return Err(Error::InvalidParameter(
            "kalman_update requires a valid sample".into(),
        ));
    }
    if (sample.pose.from, sample.pose.to) != (state.pose.from, state.pose.to) {
        return Err(Error::FrameMismatch {
            left: state.pose.to,
            right: sample.pose.to,
        });
    }
    let prior = predict(state, sample.t, params)?;

    let h = measurement_matrix();
    let mut r = Mat6::zeros();
    for i in 0..3 {
        r[(i, i)] = params.translation_std.powi(2);
        r[(3 + i, 3 + i)] = params.rotation_std.powi(2);
    }
    let dp = sample.pose.xf.translation() - prior.pose.xf.translation();
    let dtheta = rotation_delta(prior.pose.xf.rotation(), sample.pose.xf.rotation());
    let innovation = Vec6::new(dp.x, dp.y, dp.z, dtheta.x, dtheta.y, dtheta.z);

    let p = prior.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("singular innovation covariance".into()))?;
    let k = p * h.transpose() * s_inv;
    let dx: Vec9 = k * innovation;
    let i_kh = Mat9::identity() - k * h;
    let covariance = symmetrize(i_kh * p * i_kh.transpose() + k * r * k.transpose());

    let translation = prior.pose.xf.translation() + dx.fixed_rows::<3>(0);
    let velocity = prior.velocity + dx.fixed_rows::<3>(3);
    let correction = UnitQuaternion::from_scaled_axis(dx.fixed_rows::<3>(6).into_owned());
    let rotation = prior.pose.xf.rotation() * correction;

    Ok(FilterState {
        pose: FramedTransform::new(
            prior.pose.from,
            prior.pose.to,
            RigidTransform::new(rotation, translation),
        ),
        velocity,
        covariance,
        t: sample.t,
    })
}

/// Per-body filter that initializes on the first valid sample and skips
/// invalid ones.
#[derive(Debug, Clone)]
pub struct PoseFilter {
    params: FilterParams,
    state: Option<FilterState>,
}

impl PoseFilter {
    pub fn new(params: FilterParams) -> Self {
        Self { params, state: None }
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    pub fn push(&mut self, sample: &PoseSample) -> Result<Option<&FilterState>> {
        if !sample.valid {
            return Ok(self.state.as_ref());
        }
        let next = match &self.state {
            None => FilterState::initialize(sample, &self.params),
            Some(s) => kalman_update(s, sample, &self.params)?,
        };
        self.state = Some(next);
        Ok(self.state.as_ref())
    }
}

/// Pose at time `t` between two samples of the same body: translation is
/// interpolated linearly and rotation along the shorter great arc. The
/// samples may be given in either order; no extrapolation is performed.
pub fn interpolate_pose(a: &PoseSample, b: &PoseSample, t: f64) -> Result<RigidTransform> {
    if (a.pose.from, a.pose.to) != (b.pose.from, b.pose.to) {
        return Err(Error::FrameMismatch {
            left: a.pose.to,
            right: b.pose.to,
        });
    }
    let (start, end) = (a.t.min(b.t), a.t.max(b.t));
    if !(start..=end).contains(&t) {
        return Err(Error::OutOfRange { t, start, end });
    }
    if t == a.t {
        return Ok(a.pose.xf);
    }
    if t == b.t {
        return Ok(b.pose.xf);
    }
    let s = (t - a.t) / (b.t - a.t);
    Ok(interpolate_rigid(&a.pose.xf, &b.pose.xf, s))
}

/// Blend with fraction `s ∈ [0, 1]` from `a` to `b`.
pub fn interpolate_rigid(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
    let translation = a.translation() + (b.translation() - a.translation()) * s;
    let delta = rotation_delta(a.rotation(), b.rotation());
    let rotation = a.rotation() * UnitQuaternion::from_scaled_axis(delta * s);
    RigidTransform::new(rotation, translation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavStatus {
    Active,
    Suspended,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub state: NavStatus,
    /// Time the current status began, s.
    pub since: f64,
}

/// Navigation is active only while both tracked bodies were seen within
/// the grace period.
///
/// For a suspended result `since` is the moment the stalest body ran out of
/// grace; for an active one it is `now` (use [`NavGate`] to carry the onset
/// across frames).
pub fn gate_navigation(tool_last_valid: f64, patient_last_valid: f64, now: f64, grace: f64) -> NavState {
    assert!(grace > 0.0, "grace period must be positive");
    let tool_ok = now - tool_last_valid <= grace;
    let patient_ok = now - patient_last_valid <= grace;
    if tool_ok && patient_ok {
        NavState {
            state: NavStatus::Active,
            since: now,
        }
    } else {
        let stale = [(tool_ok, tool_last_valid), (patient_ok, patient_last_valid)]
            .into_iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, last)| last)
            .fold(f64::INFINITY, f64::min);
        NavState {
            state: NavStatus::Suspended,
            since: (stale + grace).min(now),
        }
    }
}

/// Stateful gate over a time-ordered stream.
#[derive(Debug, Clone)]
pub struct NavGate {
    grace: f64,
    tool_last: f64,
    patient_last: f64,
    current: Option<NavState>,
}

impl NavGate {
    pub fn new(grace: f64) -> Result<Self> {
        if grace <= 0.0 || !grace.is_finite() {
            return Err(Error::InvalidParameter(format!("grace period {grace} must be positive")));
        }
        Ok(Self {
            grace,
            tool_last: f64::NEG_INFINITY,
            patient_last: f64::NEG_INFINITY,
            current: None,
        })
    }

    pub fn observe(&mut self, now: f64, tool_valid: bool, patient_valid: bool) -> NavState {
        if tool_valid {
            self.tool_last = now;
        }
        if patient_valid {
            self.patient_last = now;
        }
        let fresh = gate_navigation(self.tool_last, self.patient_last, now, self.grace);
        let next = match self.current {
            Some(prev) if prev.state == fresh.state => prev,
            _ => fresh,
        };
        self.current = Some(next);
        next
    }
}
