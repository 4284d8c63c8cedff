//! The fixed correction chain: merge, MTF inversion, vignetting, resampling
//! onto the display grid, colour correction.

use serde::{Deserialize, Serialize};

use crate::color::{apply_ccm, ColorCorrection};
use crate::error::{Error, Result};
use crate::geometry::{resample_to_display, CameraGeometry, DistortionParams, Kernel, ResamplingSpec};
use crate::hdr::{merge_with, ExposureStack};
use crate::image::{Mask, UncertainImage};
use crate::mtf::{wiener_deconvolve, MtfModel, SignalPsd};
use crate::noise::NoiseParams;
use crate::vignette::{correct_vignette, VignettingMap};

/// Stages that can be switched off for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mtf,
    Vignette,
    Undistort,
    Color,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtf" => Ok(Stage::Mtf),
            "vignette" => Ok(Stage::Vignette),
            "undistort" => Ok(Stage::Undistort),
            "color" => Ok(Stage::Color),
            _ => Err(Error::Config(format!("unknown stage {s:?} (expected mtf, vignette, undistort or color)"))),
        }
    }
}

/// Everything the correction chain needs from calibration.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub noise: NoiseParams,
    pub mtf: MtfModel,
    pub vignetting: VignettingMap,
    pub geometry: CameraGeometry,
    pub color: ColorCorrection,
}

#[derive(Clone, Debug)]
pub struct CorrectOptions {
    pub display_width: usize,
    pub display_height: usize,
    pub resampling: ResamplingSpec,
    pub psd: SignalPsd,
    pub skip: Vec<Stage>,
}

impl CorrectOptions {
    pub fn new(display_width: usize, display_height: usize, oversampling: usize, kernel: Kernel) -> Self {
        CorrectOptions {
            display_width,
            display_height,
            resampling: ResamplingSpec::new(oversampling, kernel),
            psd: SignalPsd::Smoothed { radius: 4 },
            skip: Vec::new(),
        }
    }

    fn runs(&self, s: Stage) -> bool {
        !self.skip.contains(&s)
    }
}

#[derive(Clone, Debug)]
pub struct Corrected {
    /// Camera RGB on the display grid, diagonal variance.
    pub display: UncertainImage,
    /// XYZ with full covariance; `None` when colour correction was skipped.
    pub xyz: Option<UncertainImage>,
    /// Grid samples that are unreliable (saturated or outside the capture).
    pub invalid: Mask,
}

/// Runs the chain on a raw exposure stack.
pub fn correct(stack: &ExposureStack, cal: &Calibration, opts: &CorrectOptions) -> Result<Corrected> {
    let merged = merge_with(stack, &cal.noise)?;
    let mut img = merged.image;
    if opts.runs(Stage::Mtf) {
        img = wiener_deconvolve(&img, &cal.mtf, opts.psd)?.image;
    }
    if opts.runs(Stage::Vignette) {
        img = correct_vignette(&img, &cal.vignetting)?;
    }
    let mut geo = cal.geometry.clone();
    if !opts.runs(Stage::Undistort) {
        geo.distortion = DistortionParams::default();
    }
    let res = resample_to_display(&img, Some(&merged.invalid), &geo, opts.resampling, opts.display_width, opts.display_height)?;
    let xyz = if opts.runs(Stage::Color) {
        if res.image.channels() != 3 {
            return Err(Error::Dimension("colour correction needs an RGB capture".into()));
        }
        Some(apply_ccm(&res.image, &cal.color)?)
    } else {
        None
    };
    Ok(Corrected { display: res.image, xyz, invalid: res.invalid })
}
