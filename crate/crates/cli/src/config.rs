//! The shared TOML configuration. Every command reads the sections it needs;
//! anything not given takes the default below.

use std::path::{Path, PathBuf};

use dispmeter::geometry::{DistortionParams, Kernel};
use dispmeter::mtf::MtfModel;
use dispmeter::noise::NoiseParams;
use dispmeter::pipeline::Stage;
use dispmeter::simulate::Reconstruction;
use dispmeter::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub display: DisplayCfg,
    pub camera: CameraCfg,
    pub scene: SceneCfg,
    pub exposure: ExposureCfg,
    pub correct: CorrectCfg,
    pub fit_noise: FitNoiseCfg,
    pub fit_mtf: FitMtfCfg,
    pub fit_vignette: FitVignetteCfg,
    pub fit_color: FitColorCfg,
    pub defects: DefectsCfg,
    pub vdp: VdpCfg,
    pub mc: McCfg,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplayCfg {
    pub width: usize,
    pub height: usize,
}

impl Default for DisplayCfg {
    fn default() -> Self {
        DisplayCfg { width: 64, height: 48 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraCfg {
    pub sensor_width: usize,
    pub sensor_height: usize,
    /// Raw pixels per display pixel; builds a plain scaling homography when
    /// `homography` is absent.
    pub pitch: f64,
    pub homography: Option<[[f64; 3]; 3]>,
    pub distortion: DistortionParams,
    pub noise: NoiseParams,
    /// `None` for a perfect lens.
    pub mtf: Option<MtfModel>,
    /// cos^4 focal length in units of the sensor half-diagonal; 0 disables.
    pub vignetting_focal: f64,
    pub full_scale: f64,
}

impl Default for CameraCfg {
    fn default() -> Self {
        CameraCfg {
            sensor_width: 320,
            sensor_height: 240,
            pitch: 4.3,
            homography: None,
            distortion: DistortionParams::default(),
            noise: NoiseParams::reference_camera(),
            mtf: Some(MtfModel::reference_camera()),
            vignetting_focal: 1.5,
            full_scale: 65535.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Smooth,
    Defects,
    Checkerboard,
    Uniformity,
    Flat,
    Dark,
    Edge,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneCfg {
    pub kind: SceneKind,
    /// Brightest-channel signal at full white, DN/s.
    pub peak: f64,
    pub reconstruction: Reconstruction,
    pub subsamples: usize,
    pub defect_size: usize,
    pub defect_contrast: f64,
    pub defect_count: usize,
    pub block: usize,
    pub contrast: f64,
    pub mean_luminance: f64,
    pub edge_angle_deg: f64,
    pub edge_offset: f64,
    pub edge_low: f64,
    pub edge_high: f64,
    pub patch_count: usize,
    pub lattice_step: usize,
    pub lattice_noise: f64,
}

impl Default for SceneCfg {
    fn default() -> Self {
        SceneCfg {
            kind: SceneKind::Smooth,
            peak: 40000.0,
            reconstruction: Reconstruction::Box,
            subsamples: 3,
            defect_size: 4,
            defect_contrast: 1.0,
            defect_count: 10,
            block: 8,
            contrast: 0.1,
            mean_luminance: 142.5,
            edge_angle_deg: 5.0,
            edge_offset: 0.0,
            edge_low: 0.1,
            edge_high: 0.9,
            patch_count: 30,
            lattice_step: 4,
            lattice_noise: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureCfg {
    pub times: Vec<f64>,
    pub gains: Vec<f64>,
    /// Frames per (time, gain) pair.
    pub repeats: usize,
}

impl Default for ExposureCfg {
    fn default() -> Self {
        ExposureCfg { times: vec![0.125, 0.25, 0.5, 1.0], gains: vec![1.0], repeats: 1 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectCfg {
    pub oversampling: usize,
    pub kernel: Kernel,
    /// Box radius of the signal spectrum smoothing; 0 uses the raw periodogram.
    pub psd_radius: usize,
    pub skip: Vec<Stage>,
}

impl Default for CorrectCfg {
    fn default() -> Self {
        CorrectCfg { oversampling: 4, kernel: Kernel::Bilinear, psd_radius: 4, skip: Vec::new() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitNoiseCfg {
    /// Stack manifests of uniform bright fields, frames in equal pairs.
    pub bright: Vec<PathBuf>,
    /// Stack manifests of dark frames, in equal pairs.
    pub dark: Vec<PathBuf>,
    pub mean_floor: f64,
}

impl Default for FitNoiseCfg {
    fn default() -> Self {
        FitNoiseCfg { bright: Vec::new(), dark: Vec::new(), mean_floor: 50.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitMtfCfg {
    pub angle_deg: f64,
    pub offset: f64,
    pub half_width: f64,
}

impl Default for FitMtfCfg {
    fn default() -> Self {
        FitMtfCfg { angle_deg: 5.0, offset: 0.0, half_width: 16.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitVignetteCfg {
    /// Invert `camera.mtf` before normalising.
    pub deconvolve: bool,
}

impl Default for FitVignetteCfg {
    fn default() -> Self {
        FitVignetteCfg { deconvolve: true }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitColorCfg {
    pub mode: dispmeter::color::CcmMode,
}

impl Default for FitColorCfg {
    fn default() -> Self {
        FitColorCfg { mode: dispmeter::color::CcmMode::Linear }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectsCfg {
    pub size: usize,
    pub threshold: f64,
    /// NMS radius in grid samples; defaults to `o * size`.
    pub nms_radius: Option<f64>,
    pub sweep: Option<String>,
}

impl Default for DefectsCfg {
    fn default() -> Self {
        DefectsCfg { size: 1, threshold: 0.9, nms_radius: None, sweep: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpCfg {
    pub ppd: f64,
    /// Adapting luminance; defaults to the reference image's mean Y.
    pub mean_luminance: Option<f64>,
    pub samples: usize,
    /// Number of jittered parameter sets when `paramsets` is not given.
    pub paramset_count: usize,
    pub jitter: f64,
    pub paramsets: Option<PathBuf>,
}

impl Default for VdpCfg {
    fn default() -> Self {
        VdpCfg { ppd: 60.0, mean_luminance: None, samples: 100, paramset_count: 21, jitter: 0.1, paramsets: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McSourceKind {
    Gaussian,
    Exposures,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McCfg {
    pub samples: usize,
    pub source: McSourceKind,
    /// Subset of mtf, vignette, resample, color, in that order.
    pub stages: Vec<String>,
}

impl Default for McCfg {
    fn default() -> Self {
        McCfg {
            samples: 1000,
            source: McSourceKind::Gaussian,
            stages: ["mtf", "vignette", "resample", "color"].map(String::from).to_vec(),
        }
    }
}

/// Parses a configuration; paths inside it are resolved against `dir`.
pub fn parse(text: &str, dir: &Path) -> Result<Config> {
    let mut c: Config = toml::from_str(text)
        .map_err(|e| Error::Config(e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")))?;
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    };
    c.fit_noise.bright.iter_mut().for_each(fix);
    c.fit_noise.dark.iter_mut().for_each(fix);
    if let Some(p) = c.vdp.paramsets.as_mut() {
        fix(p);
    }
    Ok(c)
}
