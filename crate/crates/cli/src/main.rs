mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dispmeter", version, about = "Camera-based display measurement with per-pixel uncertainty")]
struct Cli {
    /// TOML configuration shared by all commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic capture together with its ground truth.
    Simulate(SimulateArgs),
    /// Fit gain, read and ADC noise from paired frames.
    FitNoise(FitNoiseArgs),
    /// Slanted-edge MTF estimate and two-Gaussian fit.
    FitMtf(FitMtfArgs),
    /// Vignetting map from flat-field stacks.
    FitVignette(FitVignetteArgs),
    /// Homography and lens distortion from display-to-raw correspondences.
    CalibrateGeometry(CalibrateGeometryArgs),
    /// Colour correction matrix from patch measurements.
    FitColor(FitColorArgs),
    /// Run the correction chain on an exposure stack.
    Correct(CorrectArgs),
    /// Find dark defects on a display-grid measurement.
    DetectDefects(DetectDefectsArgs),
    /// Perceptual difference with Monte Carlo uncertainty.
    Vdp(VdpArgs),
    /// Compare analytic and sampled uncertainty through a stage chain.
    McValidate(McValidateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitNoiseArgs {
    /// Bright-field stack manifests (added to `fit_noise.bright`).
    #[arg(long)]
    pub bright: Vec<PathBuf>,
    /// Dark-frame stack manifests (added to `fit_noise.dark`).
    #[arg(long)]
    pub dark: Vec<PathBuf>,
    /// Output TOML.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitMtfArgs {
    #[arg(long)]
    pub stack: PathBuf,
    /// Output TOML; the sampled curve goes next to it as CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitVignetteArgs {
    /// One or more flat-field stacks, averaged before normalising.
    #[arg(long, required = true)]
    pub stack: Vec<PathBuf>,
    /// Output UFI.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateGeometryArgs {
    /// CSV `sx,sy,px,py`.
    #[arg(long)]
    pub correspondences: PathBuf,
    /// Checkerboard capture; when given, the raw points are refined on it
    /// first.
    #[arg(long)]
    pub capture: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitColorArgs {
    /// CSV `r,g,b,X,Y,Z`.
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrationInputs {
    /// Calibration manifest.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Replace the noise parameters with the `[noise]` table of this file.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub mtf: Option<PathBuf>,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub color: Option<PathBuf>,
    /// Vignetting UFI.
    #[arg(long)]
    pub vignetting: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub cal: CalibrationInputs,
    #[arg(long)]
    pub stack: PathBuf,
    /// Stage to leave out: mtf, vignette, undistort or color. Repeatable.
    #[arg(long)]
    pub skip: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectDefectsArgs {
    /// Display-grid UFI (camera RGB).
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth CSV `sx,sy,size,contrast`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Threshold sweep `start:stop:step`, inclusive.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VdpArgs {
    /// XYZ test image (UFI, 3 channels).
    #[arg(long)]
    pub test: PathBuf,
    /// XYZ reference image.
    #[arg(long)]
    pub reference: PathBuf,
    /// `[[paramset]]` TOML; overrides `vdp.paramsets`.
    #[arg(long)]
    pub paramsets: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McValidateArgs {
    #[command(flatten)]
    pub cal: CalibrationInputs,
    /// Input image for the Gaussian source.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Exposure stack for the exposures source; its merge is the signal.
    #[arg(long)]
    pub stack: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("usage: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command, cli.config.as_deref(), cli.seed, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
