#![allow(dead_code)]

use dispmeter::color::ColorCorrection;
use dispmeter::geometry::{CameraGeometry, DistortionParams, Homography};
use dispmeter::mtf::MtfModel;
use dispmeter::noise::{ExposureMeta, NoiseParams};
use dispmeter::pipeline::Calibration;
use dispmeter::simulate::{cos4_vignetting, GroundTruthCalib, SpectralModel};

/// A camera looking straight at a display: `sensor` raw pixels square,
/// about `pitch` raw pixels per display pixel, a slight skew and
/// perspective, radial distortion `k1`, cos^4 vignetting and the reference
/// noise and MTF.
pub fn rig(sensor: usize, pitch: f64, k1: f64) -> GroundTruthCalib {
    let hm = Homography::from_rows([[pitch, 0.02, 3.0], [-0.015, pitch, -2.0], [1e-6, -2e-6, 1.0]]).unwrap();
    let geometry = CameraGeometry::new(hm, DistortionParams { k1, ..Default::default() }, sensor, sensor);
    let vig = cos4_vignetting(sensor, sensor, 1.5 * geometry.norm_radius()).unwrap();
    GroundTruthCalib {
        noise: NoiseParams::reference_camera(),
        mtf: Some(MtfModel::reference_camera()),
        vignetting: Some(vig),
        geometry,
        spectral: SpectralModel::reference(),
    }
}

/// Scene scale giving `peak` DN/s in the brightest camera channel at full
/// white.
pub fn scale_for_peak(calib: &GroundTruthCalib, peak: f64) -> f64 {
    let cam = calib.spectral.bases().unwrap().camera;
    let white = (0..3).map(|c| cam.row(c).sum()).fold(0.0, f64::max);
    peak / white
}

/// The calibration the pipeline would have if every fit were perfect.
pub fn true_calibration(calib: &GroundTruthCalib) -> Calibration {
    Calibration {
        noise: calib.noise.clone(),
        mtf: calib.mtf.unwrap_or_else(MtfModel::identity),
        vignetting: calib.vignetting.clone().unwrap(),
        geometry: calib.geometry.clone(),
        color: ColorCorrection::Linear(calib.color_matrix().unwrap()),
    }
}

pub fn plan(times: &[f64]) -> Vec<ExposureMeta> {
    times.iter().map(|&t| ExposureMeta::new(t, 1.0).unwrap()).collect()
}
