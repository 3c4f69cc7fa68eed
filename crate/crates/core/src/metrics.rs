//! Placement errors, touch-point error, aggregation and Welch's t-test.

use std::fmt;

use nalgebra::{Point3, Unit};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::Line3;
use crate::navigation::{guard_deviation, plane_offset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementError {
    pub entry_mm: f64,
    pub mid_mm: f64,
    pub end_mm: f64,
    pub rotation_deg: f64,
}

impl PlacementError {
    pub const ZERO: PlacementError = PlacementError {
        entry_mm: 0.0,
        mid_mm: 0.0,
        end_mm: 0.0,
        rotation_deg: 0.0,
    };

    pub fn fields(&self) -> [f64; 4] {
        [self.entry_mm, self.mid_mm, self.end_mm, self.rotation_deg]
    }
}

/// Distances at the planes orthogonal to the planned axis through the
/// planned entry, the corridor midpoint and the planned exit.
pub fn placement_error(plan_entry: &Point3<f64>, plan_exit: &Point3<f64>, actual: &Line3) -> Result<PlacementError> {
    let axis = Unit::try_new(plan_entry - plan_exit, 1e-12).ok_or(Error::ZeroVector)?;
    let rotation_deg = guard_deviation(actual, &axis)?;
    let mid = nalgebra::center(plan_entry, plan_exit);
    Ok(PlacementError {
        entry_mm: plane_offset(actual, plan_entry, &axis).norm(),
        mid_mm: plane_offset(actual, &mid, &axis).norm(),
        end_mm: plane_offset(actual, plan_exit, &axis).norm(),
        rotation_deg,
    })
}

pub fn end_to_end_error(predicted: &Point3<f64>, measured: &Point3<f64>) -> f64 {
    (predicted - measured).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and n−1 standard deviation.
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: xs.len() });
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self { mean, std: var.sqrt() })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub condition: String,
    pub entry_mm: MeanStd,
    pub mid_mm: MeanStd,
    pub end_mm: MeanStd,
    pub rotation_deg: MeanStd,
    pub n: usize,
}

pub fn summarize(condition: impl Into<String>, samples: &[PlacementError]) -> Result<StudySummary> {
    let column = |f: fn(&PlacementError) -> f64| MeanStd::from_samples(&samples.iter().map(f).collect::<Vec<_>>());
    Ok(StudySummary {
        condition: condition.into(),
        entry_mm: column(|p| p.entry_mm)?,
        mid_mm: column(|p| p.mid_mm)?,
        end_mm: column(|p| p.end_mm)?,
        rotation_deg: column(|p| p.rotation_deg)?,
        n: samples.len(),
    })
}

impl StudySummary {
    pub fn table_header() -> &'static str {
        "condition                | entry (mm)     | mid (mm)       | end (mm)       | rotation (deg) | n"
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<24} | {:<14} | {:<14} | {:<14} | {:<14} | {}",
            self.condition,
            self.entry_mm.to_string(),
            self.mid_mm.to_string(),
            self.end_mm.to_string(),
            self.rotation_deg.to_string(),
            self.n
        )
    }
}

/// Two-sided p-value of Welch's unequal-variance t-test.
pub fn significance(a: &[f64], b: &[f64]) -> Result<f64> {
    let sa = MeanStd::from_samples(a)?;
    let sb = MeanStd::from_samples(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sa.std * sa.std / na;
    let vb = sb.std * sb.std / nb;
    let se2 = va + vb;
    if se2.is_nan() || se2 <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction to the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
