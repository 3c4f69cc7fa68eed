//! Geometry engine and Monte Carlo simulator for tracked K-wire navigation.
//!
//! Modules follow the pipeline: rigid-transform algebra ([`geometry`]),
//! tool calibration ([`calibration`]), point registration
//! ([`registration`]), pose filtering and gating ([`tracking`]), guidance
//! geometry ([`navigation`]), error metrics ([`metrics`]) and synthetic
//! studies ([`simulation`]).

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod navigation;
pub mod registration;
pub mod simulation;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{AngleMode, FrameId, FramedTransform, Line3, RigidTransform, UnitVector3};
pub use metrics::{PlacementError, StudySummary};
pub use navigation::{IndicatorGeometry, PointCloud, TrajectoryPlan};
pub use simulation::config::{BendingModel, DepthSensorModel, NoiseBudget, OperatorModel, StudyConfig};
pub use simulation::Execution;
pub use tracking::PoseSample;

pub use nalgebra::{Point3, UnitQuaternion, Vector3};
