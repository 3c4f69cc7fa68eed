//! Pivot calibration of tool-tip offsets and shaft-axis regression.
//!
//! Each pivot observation is a marker-body pose `(R_i, t_i)` in the tracker
//! frame taken while the tip rests on a fixed divot, so
//! `R_i · p_tip + t_i = p_pivot` for every `i`. Stacking the constraints as
//! `[R_i  −I] · [p_tip; p_pivot] = −t_i` gives a linear least-squares
//! problem solved here by SVD.
//!
//! The shaft axis of the cannula is recovered by repeating the pivot with
//! the wire extended in fixed increments and fitting a line to the
//! resulting tip offsets.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Line3, RigidTransform};

pub const MIN_PIVOT_POSES: usize = 10;

/// Default floor on the smallest singular value of the (row-normalized)
/// stacked constraint matrix.
pub const DEFAULT_MIN_SINGULAR_VALUE: f64 = 1e-3;

/// Marker-body poses in the tracker frame recorded while pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotDataset {
    observations: Vec<RigidTransform>,
}

impl PivotDataset {
    pub fn new(observations: Vec<RigidTransform>) -> Result<Self> {
        if observations.len() < MIN_PIVOT_POSES {
            return Err(Error::InsufficientData {
                needed: MIN_PIVOT_POSES,
                got: observations.len(),
            });
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[RigidTransform] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotResult {
    /// Tip position in the marker-body frame.
    pub tip_offset: Point3<f64>,
    /// Fixed pivot location in the tracker frame.
    pub pivot_point: Point3<f64>,
    /// `sqrt(mean ‖r_i‖²)`
    pub rms_error: f64,
    /// `mean ‖r_i‖`
    pub mean_error: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PivotOptions {
    pub min_singular_value: f64,
}

impl Default for PivotOptions {
    fn default() -> Self {
        Self {
            min_singular_value: DEFAULT_MIN_SINGULAR_VALUE,
        }
    }
}

pub fn pivot_calibrate(data: &PivotDataset) -> Result<PivotResult> {
    pivot_calibrate_with(data, PivotOptions::default())
}

pub fn pivot_calibrate_with(data: &PivotDataset, options: PivotOptions) -> Result<PivotResult> {
    let n = data.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut a = DMatrix::<f64>::zeros(3 * n, 6);
    let mut b = DVector::<f64>::zeros(3 * n);
    for (i, pose) in data.observations().iter().enumerate() {
        let r = pose.rotation_matrix();
        let t = pose.translation();
        for row in 0..3 {
            for col in 0..3 {
                a[(3 * i + row, col)] = r[(row, col)] * scale;
            }
            a[(3 * i + row, 3 + row)] = -scale;
            b[3 * i + row] = -t[row] * scale;
        }
    }

    let svd = a.svd(true, true);
    let smallest = svd.singular_values.min();
    let largest = svd.singular_values.max();
    let condition_number = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if smallest <= options.min_singular_value {
        return Err(Error::IllConditioned {
            smallest_singular: smallest,
            condition_number,
        });
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;
    let tip_offset = Point3::new(x[0], x[1], x[2]);
    let pivot_point = Point3::new(x[3], x[4], x[5]);

    let norms: Vec<f64> = data
        .observations()
        .iter()
        .map(|pose| (pose.transform_point(&tip_offset) - pivot_point).norm())
        .collect();
    let rms_error = (norms.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
    let mean_error = norms.iter().sum::<f64>() / n as f64;

    Ok(PivotResult {
        tip_offset,
        pivot_point,
        rms_error,
        mean_error,
        condition_number,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaftAxisFit {
    /// Axis in the marker-body frame. The point is the centroid of the
    /// fitted offsets; the direction points from the first offset towards
    /// the last (the extension direction).
    pub axis: Line3,
    pub residual_rms: f64,
}

/// Total-least-squares line through the tip offsets.
pub fn shaft_axis_fit(tip_offsets: &[Point3<f64>]) -> Result<ShaftAxisFit> {
    let n = tip_offsets.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let centroid = tip_offsets
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords)
        / n as f64;
    // Eigen-decomposition of the scatter matrix; the SVD of the centered
    // coordinates is unreliable when two singular values are exactly zero.
    let scatter = tip_offsets.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - centroid;
        acc + d * d.transpose()
    });
    let eig = scatter.symmetric_eigen();
    let (i_max, l_max) = eig.eigenvalues.argmax();
    if l_max.max(0.0).sqrt() < 1e-9 {
        return Err(Error::InsufficientData { needed: 2, got: 1 });
    }
    let mut direction: Vector3<f64> = eig.eigenvectors.column(i_max).into_owned();
    if direction.dot(&(tip_offsets[n - 1] - tip_offsets[0])) < 0.0 {
        direction = -direction;
    }
    let axis = Line3 {
        point: Point3::from(centroid),
        direction: Unit::new_normalize(direction),
    };
    let residual_rms = (tip_offsets
        .iter()
        .map(|p| axis.distance_to(p).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(ShaftAxisFit { axis, residual_rms })
}

#[derive(Debug, Clone)]
pub struct ShaftCalibration {
    pub pivots: Vec<PivotResult>,
    pub fit: ShaftAxisFit,
}

impl ShaftCalibration {
    /// Mean of the per-extension rms errors.
    pub fn mean_rms(&self) -> f64 {
        self.pivots.iter().map(|p| p.rms_error).sum::<f64>() / self.pivots.len() as f64
    }

    pub fn mean_error(&self) -> f64 {
        self.pivots.iter().map(|p| p.mean_error).sum::<f64>() / self.pivots.len() as f64
    }
}

/// One pivot calibration per wire extension, then a line fit through the
/// recovered tips.
pub fn calibrate_shaft(extensions: &[PivotDataset]) -> Result<ShaftCalibration> {
    let pivots = extensions
        .iter()
        .map(pivot_calibrate)
        .collect::<Result<Vec<_>>>()?;
    let tips: Vec<_> = pivots.iter().map(|p| p.tip_offset).collect();
    let fit = shaft_axis_fit(&tips)?;
    Ok(ShaftCalibration { pivots, fit })
}
