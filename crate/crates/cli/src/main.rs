//! `kwnav`: calibration, registration, guidance and simulated studies.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical or degenerate data.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kwnav_core::FrameId;

#[derive(Debug, Parser)]
#[command(name = "kwnav", version, about = "Navigation geometry and Monte Carlo studies for tracked K-wire guidance")]
pub struct Cli {
    /// Overrides the seed of the study configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Study configuration JSON; bundled defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Suppress the console summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tip offset and pivot point from a pivot dataset.
    Pivot {
        /// JSON array of transform literals.
        input: PathBuf,
        #[arg(long, default_value = "pivot_result.json")]
        output: String,
    },
    /// Shaft axis from pivot datasets recorded at increasing wire extensions.
    ShaftFit {
        #[arg(required = true, num_args = 3..)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value = "shaft.json")]
        output: String,
    },
    /// Paired-point registration of two ordered point lists.
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        observed: PathBuf,
        #[arg(long, default_value = "M")]
        model_frame: FrameId,
        #[arg(long, default_value = "T")]
        observed_frame: FrameId,
        #[arg(long, default_value = "registration.json")]
        output: String,
    },
    /// Patient-to-image transform from tracker observations and the
    /// machine calibration.
    CtRegister {
        /// `T→P` transform literal.
        #[arg(long)]
        tracker_patient: PathBuf,
        /// `T→M` transform literal.
        #[arg(long)]
        tracker_machine: PathBuf,
        /// `M→I` transform literal.
        #[arg(long)]
        machine_image: PathBuf,
        #[arg(long, default_value = "ct_registration.json")]
        output: String,
    },
    /// Indicator geometry for every active frame of a pose stream.
    Indicate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Shaft calibration written by `shaft-fit`.
        #[arg(long)]
        shaft: PathBuf,
        /// `P→I` transform literal written by `ct-register`.
        #[arg(long)]
        registration: PathBuf,
        /// Seconds a body may go unseen before navigation suspends.
        #[arg(long, default_value_t = kwnav_core::tracking::DEFAULT_GRACE_S)]
        grace: f64,
        /// Kalman-smooth tool and patient poses.
        #[arg(long)]
        filter: bool,
        #[arg(long, default_value = "indicators.csv")]
        output: String,
    },
    /// Skin insertion point and normal from a point cloud.
    SurfaceMarker {
        /// CSV `x_mm,y_mm,z_mm` or ASCII PLY.
        #[arg(long)]
        cloud: PathBuf,
        /// Line literal `{"point": [..], "direction": [..]}`.
        #[arg(long)]
        axis: PathBuf,
        #[arg(long, default_value_t = kwnav_core::navigation::DEFAULT_NEIGHBORS)]
        neighbors: usize,
        #[arg(long, default_value = "surface_marker.json")]
        output: String,
    },
    /// Placement errors of actual wire lines, or summaries of a per-trial CSV.
    Metrics {
        #[arg(long, requires = "actual", conflicts_with = "trials")]
        plan: Option<PathBuf>,
        /// `{"condition": str, "lines": [line literals]}` in the plan frame.
        #[arg(long, requires = "plan")]
        actual: Option<PathBuf>,
        /// Per-trial CSV as written by `simulate-study`.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Touch-point error propagation through the navigation chain.
    SimulateE2e {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        serial: bool,
    },
    /// Simulated phantom study over all guidance conditions.
    SimulateStudy {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        serial: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
