//! Forward model of a display photographed by a camera: spectral
//! integration, display-to-sensor warp, lens blur, vignetting and sensor
//! noise. Every inverse stage of the pipeline is tested against it.

mod patterns;
mod spectra;

pub use patterns::{checkerboard, gen_defect_pattern, gen_uniformity_stimulus, render_edge, smooth_scene};
pub use spectra::{integrate_spectra, read_curves, Curves, SpectralBases, SpectralModel};

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::PatchMeasurement;
use crate::error::{Error, Result};
use crate::fft::filter_radial;
use crate::geometry::CameraGeometry;
use crate::hdr::{ExposureStack, Frame};
use crate::image::{storage_to_coord, ImagePlane, Point, UncertainImage};
use crate::mtf::MtfModel;
use crate::noise::{ExposureMeta, NoiseParams};
use crate::vignette::VignettingMap;

/// Linear subpixel drive values `P_k` in `[0, 1]` on the display grid, and the
/// luminance of full white.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub planes: [ImagePlane; 3],
    /// Radiometric scale: camera and XYZ values at unit drive are multiplied
    /// by this (cd/m^2 for the reference spectra, whose white has Y = 1).
    pub scale: f64,
}

impl SceneTruth {
    pub fn new(planes: [ImagePlane; 3], scale: f64) -> Result<Self> {
        if !planes.iter().all(|p| p.same_dims(&planes[0])) {
            return Err(Error::Dimension("scene planes differ in size".into()));
        }
        if planes.iter().any(|p| p.data().iter().any(|&v| !(0.0..=1.0).contains(&v))) {
            return Err(Error::Domain("drive values must lie in [0, 1]".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain("scene scale must be > 0".into()));
        }
        Ok(SceneTruth { planes, scale })
    }

    /// Same drive on all three primaries.
    pub fn gray(plane: ImagePlane, scale: f64) -> Result<Self> {
        SceneTruth::new([plane.clone(), plane.clone(), plane], scale)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    /// Emitted drive of each primary at display point `s` (zero off-screen).
    pub fn emission(&self, s: Point, mode: Reconstruction) -> [f64; 3] {
        let (w, h) = (self.width(), self.height());
        // continuous pixel coordinates: u right, v down, pixel (r, c) spans [c, c+1) x [r, r+1)
        let u = s.x + w as f64 / 2.0;
        let v = h as f64 / 2.0 - s.y;
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            return [0.0; 3];
        }
        let (c, r) = (u.floor() as usize, v.floor() as usize);
        let px = |k: usize| self.planes[k].get(r, c);
        match mode {
            Reconstruction::Box => [px(0), px(1), px(2)],
            Reconstruction::Stripes => {
                let third = ((u - c as f64) * 3.0).floor().min(2.0) as usize;
                let mut e = [0.0; 3];
                e[third] = 3.0 * px(third);
                e
            }
            Reconstruction::Bilinear => {
                let fu = (u - 0.5).clamp(0.0, w as f64 - 1.0);
                let fv = (v - 0.5).clamp(0.0, h as f64 - 1.0);
                let (c0, r0) = (fu.floor() as usize, fv.floor() as usize);
                let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
                let (a, b) = (fu - c0 as f64, fv - r0 as f64);
                std::array::from_fn(|k| {
                    let p = &self.planes[k];
                    (1.0 - b) * ((1.0 - a) * p.get(r0, c0) + a * p.get(r0, c1)) + b * ((1.0 - a) * p.get(r1, c0) + a * p.get(r1, c1))
                })
            }
            Reconstruction::Spot { sigma } => {
                let mut e = [0.0; 3];
                let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
                let reach = (4.0 * sigma).ceil() as i64;
                for dr in -reach..=reach {
                    for dc in -reach..=reach {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        let d2 = (u - cc as f64 - 0.5).powi(2) + (v - rr as f64 - 0.5).powi(2);
                        let g = norm * (-d2 / (2.0 * sigma * sigma)).exp();
                        for (k, ek) in e.iter_mut().enumerate() {
                            *ek += g * self.planes[k].get(rr as usize, cc as usize);
                        }
                    }
                }
                e
            }
        }
    }
}

/// How a display pixel's drive is spread over its area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reconstruction {
    /// Uniform square pixels, primaries coincident.
    #[default]
    Box,
    /// Bilinear interpolation between pixel centres.
    Bilinear,
    /// Vertical R, G, B stripes, one third of the pixel each.
    Stripes,
    /// A Gaussian spot per pixel carrying the same energy as the square.
    Spot { sigma: f64 },
}

/// The true camera and display the simulator renders with.
#[derive(Clone, Debug)]
pub struct GroundTruthCalib {
    pub noise: NoiseParams,
    /// Lens MTF, applied unclamped; `None` for a perfect lens.
    pub mtf: Option<MtfModel>,
    pub vignetting: Option<VignettingMap>,
    pub geometry: CameraGeometry,
    pub spectral: SpectralModel,
}

impl GroundTruthCalib {
    /// True camera-RGB to XYZ matrix.
    pub fn color_matrix(&self) -> Result<Matrix3<f64>> {
        Ok(self.spectral.bases()?.m)
    }
}

/// `cos^4` falloff for a lens of focal length `focal` (raw pixels), peak 1.
pub fn cos4_vignetting(width: usize, height: usize, focal: f64) -> Result<VignettingMap> {
    if !(focal > 0.0) {
        return Err(Error::Domain("focal length must be > 0".into()));
    }
    let raw = ImagePlane::from_fn(width, height, |r, c| {
        let p = storage_to_coord(r, c, width, height);
        let t = (p.x * p.x + p.y * p.y) / (focal * focal);
        1.0 / ((1.0 + t) * (1.0 + t))
    });
    let peak = raw.max();
    VignettingMap::new(vec![raw.map(|v| v / peak)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub reconstruction: Reconstruction,
    /// Subsamples per raw pixel along each axis for area integration.
    /// Stripes need at least 3; below that primaries are treated as coincident.
    pub subsamples: usize,
    /// Clip level of the raw values, DN.
    pub full_scale: f64,
    /// Disable to get exactly `k psi t g` when the noise parameters are zero.
    pub shot_noise: bool,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { reconstruction: Reconstruction::Box, subsamples: 3, full_scale: 65535.0, shot_noise: true, seed: 0 }
    }
}

/// Noise-free camera signal `k psi` (DN/s at unit gain) on the sensor,
/// per camera channel: warp, area integration, blur and vignetting.
pub fn render_radiance(truth: &SceneTruth, calib: &GroundTruthCalib, opts: &RenderOptions) -> Result<Vec<ImagePlane>> {
    let geo = &calib.geometry;
    let (w, h) = (geo.sensor_width, geo.sensor_height);
    if w == 0 || h == 0 {
        return Err(Error::Dimension("empty sensor".into()));
    }
    let n = opts.subsamples.max(1);
    let mode = match opts.reconstruction {
        Reconstruction::Stripes if n < 3 => Reconstruction::Box,
        m => m,
    };
    let bases = calib.spectral.bases()?;
    let a = bases.camera * truth.scale;
    let rows: Vec<(Vec<[f64; 3]>, usize, usize)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut line = vec![[0.0; 3]; w];
            let (mut failed, mut seen) = (0, 0);
            for (c, out) in line.iter_mut().enumerate() {
                let centre = storage_to_coord(r, c, w, h);
                let mut acc = [0.0; 3];
                for i in 0..n {
                    for j in 0..n {
                        let p = Point::new(
                            centre.x + (j as f64 + 0.5) / n as f64 - 0.5,
                            centre.y - (i as f64 + 0.5) / n as f64 + 0.5,
                        );
                        match geo.raw_to_display(p) {
                            Ok(s) => {
                                let e = truth.emission(s, mode);
                                seen += on_display(truth, s) as usize;
                                for k in 0..3 {
                                    acc[k] += e[k];
                                }
                            }
                            Err(_) => failed += 1,
                        }
                    }
                }
                let inv = 1.0 / (n * n) as f64;
                let e = nalgebra::Vector3::new(acc[0] * inv, acc[1] * inv, acc[2] * inv);
                let l = a * e;
                *out = [l.x, l.y, l.z];
            }
            (line, failed, seen)
        })
        .collect();
    let failed: usize = rows.iter().map(|r| r.1).sum();
    let seen: usize = rows.iter().map(|r| r.2).sum();
    let total = w * h * n * n;
    if failed * 100 > total {
        return Err(Error::Coverage(format!("inverse warp failed on {:.2}% of the sensor", 100.0 * failed as f64 / total as f64)));
    }
    if seen == 0 {
        return Err(Error::Coverage("the display is not visible on the sensor".into()));
    }
    let mut planes: Vec<ImagePlane> = (0..3)
        .map(|k| ImagePlane::from_fn(w, h, |r, c| rows[r].0[c][k]))
        .collect();
    if let Some(m) = &calib.mtf {
        m.validate()?;
        let m = *m;
        planes = planes.iter().map(|p| filter_radial(p, |f| m.eval_raw(f))).collect();
    }
    if let Some(v) = &calib.vignetting {
        let vp = v.planes();
        if vp[0].width() != w || vp[0].height() != h {
            return Err(Error::Dimension("vignetting map does not match the sensor".into()));
        }
        for (k, p) in planes.iter_mut().enumerate() {
            let vk = &vp[k.min(vp.len() - 1)];
            for (x, f) in p.data_mut().iter_mut().zip(vk.data()) {
                *x *= f;
            }
        }
    }
    Ok(planes)
}

fn on_display(truth: &SceneTruth, s: Point) -> bool {
    s.x.abs() <= truth.width() as f64 / 2.0 && s.y.abs() <= truth.height() as f64 / 2.0
}

/// Draws raw frames from a noise-free signal (see [`render_radiance`]).
///
/// Each frame, channel and row uses its own ChaCha stream derived from the
/// seed, so the result does not depend on thread scheduling.
pub fn expose(signal: &[ImagePlane], noise: &NoiseParams, plan: &[ExposureMeta], opts: &RenderOptions) -> Result<ExposureStack> {
    if plan.is_empty() {
        return Err(Error::Domain("exposure plan is empty".into()));
    }
    noise.validate()?;
    let frames = plan
        .iter()
        .enumerate()
        .map(|(fi, &meta)| {
            meta.validate()?;
            let planes = signal
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let (w, h) = (s.width(), s.height());
                    let k = noise.k[c];
                    let mut data = vec![0.0; w * h];
                    data.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                        rng.set_stream(((fi as u64) << 40) | ((c as u64) << 32) | r as u64);
                        for (x, out) in row.iter_mut().enumerate() {
                            let psi = s.data()[r * w + x] / k;
                            let v = if opts.shot_noise {
                                noise.sample(psi, meta, c, &mut rng)
                            } else {
                                k * (psi.max(0.0) + noise.dark_offset) * meta.t * meta.g + quiet_noise(noise, meta, c, &mut rng)
                            };
                            *out = v.min(opts.full_scale);
                        }
                    });
                    ImagePlane::new(w, h, data)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Frame { planes, meta })
        })
        .collect::<Result<Vec<_>>>()?;
    ExposureStack::new(frames, noise.clone(), opts.full_scale)
}

/// Read and ADC noise only, in DN.
fn quiet_noise(p: &NoiseParams, meta: ExposureMeta, c: usize, rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, Normal};
    let mut v = 0.0;
    if p.read_var[c] > 0.0 {
        v += Normal::new(0.0, p.read_var[c].sqrt()).expect("finite sd").sample(rng) * meta.g;
    }
    if p.adc_var[c] > 0.0 {
        v += Normal::new(0.0, p.adc_var[c].sqrt()).expect("finite sd").sample(rng);
    }
    p.k[c] * v
}

/// Renders an exposure stack of `truth` as seen by `calib`.
pub fn render_capture(truth: &SceneTruth, calib: &GroundTruthCalib, plan: &[ExposureMeta], opts: &RenderOptions) -> Result<ExposureStack> {
    if plan.is_empty() {
        return Err(Error::Domain("exposure plan is empty".into()));
    }
    let signal = render_radiance(truth, calib, opts)?;
    expose(&signal, &calib.noise, plan, opts)
}

/// Camera-RGB signal the pipeline should recover at each display-grid sample
/// (before colour correction), evaluated without blur or noise.
pub fn display_truth(
    truth: &SceneTruth,
    calib: &GroundTruthCalib,
    mode: Reconstruction,
    oversampling: usize,
) -> Result<UncertainImage> {
    let a = calib.spectral.bases()?.camera * truth.scale;
    let (w_d, h_d) = (truth.width(), truth.height());
    let o = oversampling.max(1);
    let (gw, gh) = (o * w_d + 1, o * h_d + 1);
    let vals: Vec<[f64; 3]> = (0..gw * gh)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / gw, i % gw);
            let s = Point::new(-(w_d as f64) / 2.0 + c as f64 / o as f64, h_d as f64 / 2.0 - r as f64 / o as f64);
            let e = truth.emission(s, mode);
            let l = a * nalgebra::Vector3::from(e);
            [l.x, l.y, l.z]
        })
        .collect();
    let planes = (0..3).map(|k| ImagePlane::new(gw, gh, vals.iter().map(|v| v[k]).collect())).collect::<Result<Vec<_>>>()?;
    UncertainImage::exact(planes)
}

/// Scene scale at which full white gives `peak` DN/s in the brightest
/// camera channel.
pub fn scale_for_peak(spectral: &SpectralModel, peak: f64) -> Result<f64> {
    let cam = spectral.bases()?.camera;
    let white = (0..3).map(|c| cam.row(c).sum()).fold(0.0, f64::max);
    if !(peak > 0.0 && white > 0.0) {
        return Err(Error::Domain("peak and white response must be > 0".into()));
    }
    Ok(peak / white)
}

/// Colour-chart measurements: full white first, then drives drawn
/// uniformly from `[0.05, 1]^3`. Camera RGB and XYZ are both multiplied by
/// `scale`.
pub fn colour_patches(spectral: &SpectralModel, scale: f64, count: usize, seed: u64) -> Result<Vec<PatchMeasurement>> {
    use rand::Rng;
    let b = spectral.bases()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let p = if i == 0 {
                nalgebra::Vector3::repeat(1.0)
            } else {
                nalgebra::Vector3::from_fn(|_, _| rng.random_range(0.05..=1.0))
            };
            let l = b.camera * p * scale;
            let y = b.xyz * p * scale;
            Ok(PatchMeasurement { camera_rgb: [l.x, l.y, l.z], reference_xyz: [y.x, y.y, y.z] })
        })
        .collect()
}

/// Display lattice points every `step` pixels (corners included) paired with
/// their raw positions, perturbed by Gaussian noise of `noise_sd` raw pixels.
pub fn lattice_correspondences(
    geometry: &CameraGeometry,
    display_width: usize,
    display_height: usize,
    step: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<(Point, Point)>> {
    use rand_distr::{Distribution, Normal};
    if step == 0 {
        return Err(Error::Domain("lattice step must be >= 1".into()));
    }
    let normal = Normal::new(0.0, noise_sd).map_err(|_| Error::Domain(format!("bad noise sd {noise_sd}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for j in (0..=display_height).step_by(step) {
        for i in (0..=display_width).step_by(step) {
            let s = Point::new(i as f64 - display_width as f64 / 2.0, display_height as f64 / 2.0 - j as f64);
            let p = geometry.display_to_raw(s);
            out.push((s, Point::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng))));
        }
    }
    Ok(out)
}
