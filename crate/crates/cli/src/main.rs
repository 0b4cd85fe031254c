//! `tumorgen`: synthetic liver tumors, validation sets, metrics and checkpoint selection.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or missing file, 4 config schema,
//! 5 invalid input data, 6 generation failure. Failures print
//! one JSON object `{"error": {"category", "message"}}` on stderr.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use tumorgen::error::Error;

#[derive(Parser, Debug)]
#[command(name = "tumorgen", version, about = "Synthetic liver tumor generator and validation tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML config; every key is optional except `schema_version`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment hepatic vessels by intensity threshold.
    Vessels {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        liver: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render a gallery of deformed tumor shapes.
    Shapes {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value = "medium")]
        class: String,
        /// Isotropic voxel spacing in mm.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render texture blocks.
    Textures {
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 90.0)]
        mu: f64,
        #[arg(long, default_value_t = 25.0)]
        sigma_g: f64,
        #[arg(long, default_value_t = 4)]
        coarse_factor: usize,
        #[arg(long, default_value_t = 1.0)]
        blur_sigma: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Insert synthetic tumors into one host volume.
    Synth {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        liver: PathBuf,
        /// Size class per tumor; overrides `synth.classes`.
        #[arg(long = "class")]
        classes: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build an offline validation set: one item per (host, size class).
    MakeValidation {
        /// Directory of `<id>/image.nii[.gz]` + `<id>/liver.nii[.gz]`.
        #[arg(long)]
        pool: PathBuf,
        /// Comma-separated class names; overrides `validation.classes`.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write items of the continual training stream.
    Stream {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted masks against ground truth (files paired by name).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overlap_frac: Option<f64>,
        /// Label value marking tumor voxels.
        #[arg(long)]
        label: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Pick the best checkpoint from a metric trajectory (JSON lines).
    SelectCheckpoint {
        trajectory: PathBuf,
        #[arg(long, default_value = "dsc")]
        metric: String,
        #[arg(long, conflicts_with = "minimize")]
        maximize: bool,
        #[arg(long)]
        minimize: bool,
        /// Only this run; default is every run in the file.
        #[arg(long)]
        run: Option<u64>,
    },
    /// Simulate checkpoint selection with small and large validation sets.
    SimulateStudy {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render evaluation, trajectory and study results as CSV and PNG.
    #[command(group(ArgGroup::new("input").required(true).multiple(true).args(["eval", "trajectory", "study"])))]
    Report {
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Clip to the HU window and z-normalize a volume for model input.
    Preprocess {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a pool of synthetic host phantoms.
    Phantom {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Grid size `x,y,z`.
        #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 48])]
        dims: Vec<usize>,
        /// Isotropic voxel spacing in mm.
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Error category and exit code.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Io { .. } => ("io", 3),
        Error::Config(_) => ("config", 4),
        Error::PlacementExhausted { .. }
        | Error::ShapeRejected { .. }
        | Error::ShapeTooLarge { .. }
        | Error::SubResolution { .. }
        | Error::StructuringElementTooLarge { .. } => ("generation", 6),
        Error::InvalidGeometry(_)
        | Error::DimMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::EmptyLiver
        | Error::EmptyMask
        | Error::EmptyInput
        | Error::ZeroVariance
        | Error::UnsupportedDatatype(_)
        | Error::UnsupportedFormat(_)
        | Error::CorruptHeader(_)
        | Error::InvalidLabel(_)
        | Error::MissingMetric(_)
        | Error::InvalidTrajectory(_)
        | Error::EpochGridMismatch
        | Error::Json(_) => ("invalid-input", 5),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            let msg = serde_json::json!({"error": {"category": category, "message": e.to_string()}});
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
