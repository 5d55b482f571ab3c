//! Command-line front end for the scanning-mirror calibration pipeline.
//!
//! A run lives in one directory. `simulate` fills it with observations (and
//! ground truth), the `estimate-*` commands add estimator outputs next to
//! them, and `report` renders everything into markdown with SVG plots:
//!
//! ```text
//! msmcal simulate run/ --seed 7
//! msmcal estimate-beams run/
//! msmcal estimate-poses run/ --holdout-beam 2
//! msmcal estimate-frame run/
//! msmcal calibrate-hall run/ --model sine
//! msmcal report run/
//! ```
//!
//! Exit codes: 0 on success, 2 for validation problems (bad flags, missing
//! or malformed files), 3 for numerical failures inside an estimator.

mod commands;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msmcal_core::beam::BeamError;
use msmcal_core::dataset::DatasetError;
use msmcal_core::frame::FrameError;
use msmcal_core::hall::{HallError, HallModelKind};
use msmcal_core::pose::PoseError;
use msmcal_core::sim::SimError;

#[derive(Parser)]
#[command(
    name = "msmcal",
    version,
    about = "Scanning-mirror calibration from laser dots, checkerboards, and Hall logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Feature family flag for `calibrate-hall`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Pose is affine in the interpolated field samples.
    Linear,
    /// Pose is affine in drive-frequency sinusoids of time.
    Sine,
}

impl From<ModelArg> for HallModelKind {
    fn from(arg: ModelArg) -> Self {
        match arg {
            ModelArg::Linear => HallModelKind::Linear,
            ModelArg::Sine => HallModelKind::Sine,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into a directory.
    Simulate {
        /// Dataset directory to create.
        dir: PathBuf,
        /// Simulation recipe (JSON); built-in defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Noise seed; overrides the recipe and MSMCALIB_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Spanning-angle preset (degrees); overrides the recipe.
        #[arg(long)]
        span_deg: Option<f64>,
        /// Keep only the first N pulses; overrides the recipe.
        #[arg(long)]
        max_pulses: Option<usize>,
    },
    /// Reconstruct the beam lines from the sliding captures.
    EstimateBeams {
        /// Dataset directory.
        dir: PathBuf,
    },
    /// Jointly estimate the per-pulse mirror planes.
    EstimatePoses {
        /// Dataset directory with beams_est.json present.
        dir: PathBuf,
        /// Drop this beam from the fit and score its predicted dots.
        #[arg(long)]
        holdout_beam: Option<usize>,
    },
    /// Recover the home frame and express every pulse pose in it.
    EstimateFrame {
        /// Dataset directory with poses.json present.
        dir: PathBuf,
    },
    /// Fit a Hall-to-pose model and evaluate it over random splits.
    CalibrateHall {
        /// Dataset directory with framed poses and Hall CSVs present.
        dir: PathBuf,
        /// Feature family.
        #[arg(long, value_enum, default_value_t = ModelArg::Sine)]
        model: ModelArg,
        /// Number of random train/test splits.
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        /// Training fraction of each split.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        /// Split-shuffle seed; falls back to MSMCALIB_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write report.md and SVG plots for a run directory.
    Report {
        /// Dataset directory.
        dir: PathBuf,
    },
}

/// Any failure a subcommand can surface.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Input or flag validation.
    #[error("{0}")]
    Validation(String),
    /// File-level schema, parse, or I/O problems.
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    /// Simulator failure.
    #[error(transparent)]
    Sim(#[from] SimError),
    /// Beam-stage failure.
    #[error(transparent)]
    Beam(#[from] BeamError),
    /// Pose-stage failure.
    #[error(transparent)]
    Pose(#[from] PoseError),
    /// Frame-stage failure.
    #[error(transparent)]
    Frame(#[from] FrameError),
    /// Hall-stage failure.
    #[error(transparent)]
    Hall(#[from] HallError),
    /// Write failure outside the dataset layer.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for validation problems, 3 for numerical failures.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Dataset(_) | CliError::Io { .. } => 2,
            CliError::Sim(SimError::Config(_)) => 2,
            _ => 3,
        }
    }
}

/// Seed precedence: explicit flag, then MSMCALIB_SEED, then the fallback.
pub(crate) fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("MSMCALIB_SEED") {
        Ok(text) => text.parse().map_err(|_| {
            CliError::Validation(format!("MSMCALIB_SEED is not an integer: {text:?}"))
        }),
        Err(_) => Ok(fallback),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { dir, config, seed, span_deg, max_pulses } => {
            commands::simulate(&dir, config.as_deref(), seed, span_deg, max_pulses)
        }
        Command::EstimateBeams { dir } => commands::estimate_beams(&dir),
        Command::EstimatePoses { dir, holdout_beam } => {
            commands::estimate_poses(&dir, holdout_beam)
        }
        Command::EstimateFrame { dir } => commands::estimate_frame(&dir),
        Command::CalibrateHall { dir, model, repeats, split, seed } => {
            commands::calibrate_hall(&dir, model.into(), repeats, split, resolve_seed(seed, 0)?)
        }
        Command::Report { dir } => report::write_report(&dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
