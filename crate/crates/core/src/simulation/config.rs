//! Simulator parameters and the study configuration file.
//!
//! Every default lives in `config/defaults.json`. The values are a free fit
//! chosen to reproduce orderings and error bands, not measured quantities.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULTS_JSON: &str = include_str!("../../config/defaults.json");

/// Per-component noise of the navigation chain. Translations are per-axis
/// Gaussian std in mm, rotations are Gaussian angle std in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBudget {
    pub slam_trans_mm: f64,
    pub slam_rot_deg: f64,
    pub tool_track_trans_mm: f64,
    pub tool_track_rot_deg: f64,
    pub patient_track_trans_mm: f64,
    pub patient_track_rot_deg: f64,
    pub pivot_mm: f64,
    pub ctreg_trans_mm: f64,
    pub ctreg_rot_deg: f64,
    pub annotation_mm: f64,
}

impl NoiseBudget {
    pub fn values(&self) -> [(&'static str, f64); 10] {
        [
            ("slam_trans_mm", self.slam_trans_mm),
            ("slam_rot_deg", self.slam_rot_deg),
            ("tool_track_trans_mm", self.tool_track_trans_mm),
            ("tool_track_rot_deg", self.tool_track_rot_deg),
            ("patient_track_trans_mm", self.patient_track_trans_mm),
            ("patient_track_rot_deg", self.patient_track_rot_deg),
            ("pivot_mm", self.pivot_mm),
            ("ctreg_trans_mm", self.ctreg_trans_mm),
            ("ctreg_rot_deg", self.ctreg_rot_deg),
            ("annotation_mm", self.annotation_mm),
        ]
    }
}

/// Simulated operator. The tracked-mode fields drive the iterative
/// alignment loop; the `non_tracked_*` fields are the one-shot aiming
/// residuals used without tool feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorModel {
    /// Tip placement error at the skin, per-axis std mm.
    pub residual_mm: f64,
    /// Hand jitter per correction, deg.
    pub residual_deg: f64,
    /// Error of the first approach direction before feedback, deg.
    pub initial_aim_deg: f64,
    pub non_tracked_residual_mm: f64,
    pub non_tracked_residual_deg: f64,
    pub iterations: usize,
    pub convergence_mm: f64,
    /// Fraction of the indicated correction applied per iteration.
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendingModel {
    /// Lateral wire offset at bone contact per degree of re-angling after
    /// the wire entered tissue, mm/deg.
    pub tissue_gain_mm_per_deg: f64,
    /// Per-axis std of tip skating at bone contact, mm.
    pub skate_std_mm: f64,
    /// Stiffness factor of the cannula-guided wire; 0 is fully rigid.
    pub cannula_stiffness: f64,
    /// Stiffness factor of a free wire (drill-mounted and non-tracked).
    pub wire_stiffness: f64,
    /// Ratio of end-plane to entry-plane deviation of a bent wire.
    pub distal_carryover: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSensorModel {
    /// Per-point Gaussian depth noise std, mm.
    pub depth_noise_mm: f64,
    /// Lateral misplacement of the reconstructed skin relative to the
    /// display, mm, in a random direction per trial.
    pub marker_bias_mm: f64,
    pub cloud_spacing_mm: f64,
    pub cloud_half_width_mm: f64,
    pub neighbors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E2eConfig {
    pub trials: usize,
    pub landmarks_mm: Vec<[f64; 3]>,
}

impl E2eConfig {
    pub fn landmarks(&self) -> Vec<Point3<f64>> {
        self.landmarks_mm.iter().map(|p| Point3::from(*p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub trials: usize,
    pub phantom_seed: u64,
    pub budget: NoiseBudget,
    pub operator: OperatorModel,
    pub bending: BendingModel,
    pub depth: DepthSensorModel,
    pub e2e: E2eConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("bundled defaults parse")
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl StudyConfig {
    pub fn defaults_json() -> &'static str {
        DEFAULTS_JSON
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InvalidParameter("trials must be at least 2".into()));
        }
        for (name, v) in self.budget.values() {
            non_negative(name, v)?;
        }
        let op = &self.operator;
        for (name, v) in [
            ("residual_mm", op.residual_mm),
            ("residual_deg", op.residual_deg),
            ("initial_aim_deg", op.initial_aim_deg),
            ("non_tracked_residual_mm", op.non_tracked_residual_mm),
            ("non_tracked_residual_deg", op.non_tracked_residual_deg),
            ("convergence_mm", op.convergence_mm),
        ] {
            non_negative(name, v)?;
        }
        if op.iterations < 1 {
            return Err(Error::InvalidParameter("operator.iterations must be at least 1".into()));
        }
        if !(op.gain > 0.0 && op.gain <= 1.0) {
            return Err(Error::InvalidParameter("operator.gain must be in (0, 1]".into()));
        }
        let b = &self.bending;
        non_negative("tissue_gain_mm_per_deg", b.tissue_gain_mm_per_deg)?;
        non_negative("skate_std_mm", b.skate_std_mm)?;
        non_negative("distal_carryover", b.distal_carryover)?;
        for (name, v) in [("cannula_stiffness", b.cannula_stiffness), ("wire_stiffness", b.wire_stiffness)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        let d = &self.depth;
        non_negative("depth_noise_mm", d.depth_noise_mm)?;
        non_negative("marker_bias_mm", d.marker_bias_mm)?;
        if !(d.cloud_spacing_mm > 0.0 && d.cloud_half_width_mm >= d.cloud_spacing_mm) {
            return Err(Error::InvalidParameter("cloud spacing must be positive and not exceed the half width".into()));
        }
        if d.neighbors < 3 {
            return Err(Error::InvalidParameter("depth.neighbors must be at least 3".into()));
        }
        if self.e2e.trials < 1 || self.e2e.landmarks_mm.is_empty() {
            return Err(Error::InvalidParameter("e2e needs at least one trial and one landmark".into()));
        }
        Ok(())
    }

    /// Copy with every noise source, residual and bending gain set to zero.
    pub fn noiseless(&self) -> Self {
        let mut c = self.clone();
        c.budget = NoiseBudget::default();
        c.operator.residual_mm = 0.0;
        c.operator.residual_deg = 0.0;
        c.operator.initial_aim_deg = 0.0;
        c.operator.non_tracked_residual_mm = 0.0;
        c.operator.non_tracked_residual_deg = 0.0;
        c.bending.tissue_gain_mm_per_deg = 0.0;
        c.bending.skate_std_mm = 0.0;
        c.depth.depth_noise_mm = 0.0;
        c.depth.marker_bias_mm = 0.0;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let c = StudyConfig::default();
        c.validate().unwrap();
        assert_eq!(c.e2e.landmarks_mm.len(), 7);
        c.noiseless().validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c = StudyConfig::default();
        let back = StudyConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = StudyConfig::default();
        c.budget.pivot_mm = -1.0;
        assert!(c.validate().is_err());
        let mut c = StudyConfig::default();
        c.bending.cannula_stiffness = 1.5;
        assert!(c.validate().is_err());
        let mut c = StudyConfig::default();
        c.operator.iterations = 0;
        assert!(c.validate().is_err());
        assert!(StudyConfig::from_json(r#"{"seed": 1}"#).is_err());
    }
}
