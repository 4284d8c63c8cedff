//! Structural visual-difference predictor: DKL opponent channels, a
//! Laplacian pyramid, a log-parabola CSF per channel, a masking transducer
//! and Minkowski pooling into a JOD score.

mod pyramid;

pub use pyramid::{collapse, expand, gaussian_levels, laplacian_pyramid, max_levels, reduce, Pyramid};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{covariance_factors, draw_gaussian, ImagePlane, UncertainImage};

/// XYZ to cone responses (Hunt-Pointer-Estevez).
pub const XYZ_TO_LMS: [[f64; 3]; 3] = [[0.38971, 0.68898, -0.07868], [-0.22981, 1.18340, 0.04641], [0.0, 0.0, 1.0]];

/// Adaptation white: x 0.3127, y 0.329 at unit luminance.
pub const D65_XYZ: [f64; 3] = [0.3127 / 0.329, 1.0, (1.0 - 0.3127 - 0.329) / 0.329];

/// Standard normal quantile of 0.75: one JOD separates conditions that 75%
/// of observers tell apart.
pub const Z75: f64 = 0.6744897501960817;

/// The 3x3 map XYZ to (achromatic, red-green, yellow-violet). Cone signals
/// are normalised by the white, so gray at luminance Y maps to (Y, 0, 0).
pub fn dkl_matrix() -> Matrix3<f64> {
    let lms = Matrix3::from_fn(|r, c| XYZ_TO_LMS[r][c]);
    let w = lms * Vector3::from(D65_XYZ);
    let norm = Matrix3::from_diagonal(&Vector3::new(1.0 / w.x, 1.0 / w.y, 1.0 / w.z));
    let opp = Matrix3::new(0.5, 0.5, 0.0, 1.0, -1.0, 0.0, -0.5, -0.5, 1.0);
    opp * norm * lms
}

/// Converts three XYZ mean planes to DKL planes.
pub fn xyz_to_dkl(xyz: &[ImagePlane]) -> Result<[ImagePlane; 3]> {
    if xyz.len() != 3 {
        return Err(Error::Dimension(format!("DKL needs 3 XYZ planes, got {}", xyz.len())));
    }
    if !xyz[1].same_dims(&xyz[0]) || !xyz[2].same_dims(&xyz[0]) {
        return Err(Error::Dimension("XYZ planes differ in size".into()));
    }
    let m = dkl_matrix();
    let (w, h) = (xyz[0].width(), xyz[0].height());
    Ok(std::array::from_fn(|k| {
        ImagePlane::from_fn(w, h, |r, c| (0..3).map(|j| m[(k, j)] * xyz[j].get(r, c)).sum())
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewingConfig {
    /// Pixels per visual degree.
    pub ppd: f64,
    /// Mean luminance the observer is adapted to, cd/m^2. Local contrast is
    /// computed against a local mean floored at 1% of this.
    pub mean_luminance: f64,
}

impl ViewingConfig {
    pub fn new(ppd: f64, mean_luminance: f64) -> Result<Self> {
        let v = ViewingConfig { ppd, mean_luminance };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ppd > 0.0 && self.ppd.is_finite()) {
            return Err(Error::Domain(format!("pixels per degree must be > 0, got {}", self.ppd)));
        }
        if !(self.mean_luminance > 0.0 && self.mean_luminance.is_finite()) {
            return Err(Error::Domain(format!("mean luminance must be > 0, got {}", self.mean_luminance)));
        }
        Ok(())
    }
}

/// Log-parabola contrast sensitivity: `s * 10^-(log10(rho / f) / bw)^2`.
/// Chromatic channels stay at their peak below the peak frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csf {
    pub peak_sensitivity: f64,
    pub peak_frequency: f64,
    pub bandwidth: f64,
}

impl Csf {
    pub fn eval(&self, rho: f64, low_pass: bool) -> f64 {
        if low_pass && rho <= self.peak_frequency {
            return self.peak_sensitivity;
        }
        let u = (rho / self.peak_frequency).log10() / self.bandwidth;
        self.peak_sensitivity * 10f64.powf(-u * u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdpParamSet {
    /// Achromatic, red-green, yellow-violet.
    pub csf: [Csf; 3],
    /// Transducer exponent on the difference.
    pub mask_p: f64,
    /// Transducer exponent on the masker.
    pub mask_q: f64,
    /// Minkowski pooling exponent.
    pub beta: f64,
    /// JOD units per unit of pooled difference.
    pub alpha: f64,
}

impl Default for VdpParamSet {
    fn default() -> Self {
        VdpParamSet {
            csf: [
                Csf { peak_sensitivity: 100.0, peak_frequency: 3.0, bandwidth: 1.0 },
                Csf { peak_sensitivity: 60.0, peak_frequency: 0.5, bandwidth: 1.2 },
                Csf { peak_sensitivity: 40.0, peak_frequency: 0.3, bandwidth: 1.2 },
            ],
            mask_p: 2.2,
            mask_q: 2.0,
            beta: 2.0,
            alpha: 1.0,
        }
    }
}

impl VdpParamSet {
    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.csf.iter().enumerate() {
            for (name, v) in [("peak_sensitivity", c.peak_sensitivity), ("peak_frequency", c.peak_frequency), ("bandwidth", c.bandwidth)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Domain(format!("csf[{k}].{name} must be > 0, got {v}")));
                }
            }
        }
        for (name, v) in [("mask_p", self.mask_p), ("mask_q", self.mask_q), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be >= 1, got {}", self.beta)));
        }
        Ok(())
    }

    fn scaled(&self, f: &mut impl FnMut() -> f64) -> Self {
        let mut csf = self.csf;
        for c in &mut csf {
            c.peak_sensitivity *= f();
            c.peak_frequency *= f();
            c.bandwidth *= f();
        }
        VdpParamSet {
            csf,
            mask_p: self.mask_p * f(),
            mask_q: self.mask_q * f(),
            beta: (self.beta * f()).max(1.0),
            alpha: self.alpha * f(),
        }
    }
}

/// `count` sets with every parameter multiplied by `exp(N(0, rel_sigma^2))`.
pub fn jitter_paramsets(base: &VdpParamSet, count: usize, rel_sigma: f64, seed: u64) -> Result<Vec<VdpParamSet>> {
    base.validate()?;
    if !(rel_sigma >= 0.0 && rel_sigma.is_finite()) {
        return Err(Error::Domain(format!("relative sigma must be >= 0, got {rel_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            base.scaled(&mut || {
                let z: f64 = StandardNormal.sample(&mut rng);
                (rel_sigma * z).exp()
            })
        })
        .collect())
}

/// Reference-side pyramids, shared by every test image scored against it.
struct Prepared {
    width: usize,
    height: usize,
    levels: usize,
    /// Per channel, per level (bands then base) contrast.
    contrast: [Vec<ImagePlane>; 3],
    /// Per level local mean of the achromatic channel (floored).
    local_mean: Vec<ImagePlane>,
}

fn band_contrast(pyr: &Pyramid, local_mean: &[ImagePlane]) -> Vec<ImagePlane> {
    pyr.bands
        .iter()
        .chain(std::iter::once(&pyr.base))
        .zip(local_mean)
        .map(|(b, m)| ImagePlane::from_fn(b.width(), b.height(), |r, c| b.get(r, c) / m.get(r, c)))
        .collect()
}

fn prepare(reference: &[ImagePlane], view: &ViewingConfig) -> Result<Prepared> {
    view.validate()?;
    let dkl = xyz_to_dkl(reference)?;
    let (width, height) = (dkl[0].width(), dkl[0].height());
    let levels = max_levels(width, height);
    let floor = 0.01 * view.mean_luminance;
    let g = gaussian_levels(&dkl[0], levels)?;
    let mut local_mean: Vec<ImagePlane> = (0..levels)
        .map(|b| expand(&g[b + 1], g[b].width(), g[b].height()).map(|v| v.max(floor)))
        .collect();
    local_mean.push(g[levels].map(|v| v.max(floor)));
    let mut contrast: [Vec<ImagePlane>; 3] = Default::default();
    for k in 0..3 {
        contrast[k] = band_contrast(&laplacian_pyramid(&dkl[k], levels)?, &local_mean);
    }
    Ok(Prepared { width, height, levels, contrast, local_mean })
}

/// Quality score and per-pixel pooled difference.
#[derive(Clone, Debug, PartialEq)]
pub struct JodScore {
    pub jod: f64,
    pub heatmap: ImagePlane,
}

fn score_prepared(test: &[ImagePlane], prep: &Prepared, view: &ViewingConfig, params: &VdpParamSet) -> Result<JodScore> {
    if test.len() != 3 || test[0].width() != prep.width || test[0].height() != prep.height {
        return Err(Error::Dimension(format!(
            "test image does not match the {}x{} XYZ reference",
            prep.width, prep.height
        )));
    }
    params.validate()?;
    let dkl = xyz_to_dkl(test)?;
    let n = prep.levels;
    let beta = params.beta;
    // sum over channels and levels of T^beta, at each level's resolution
    let mut acc: Vec<ImagePlane> = prep.contrast[0].iter().map(|p| ImagePlane::zeros(p.width(), p.height())).collect();
    for k in 0..3 {
        let tc = band_contrast(&laplacian_pyramid(&dkl[k], n)?, &prep.local_mean);
        for (b, (t, rc)) in tc.iter().zip(&prep.contrast[k]).enumerate() {
            let rho = view.ppd / 2f64.powi(b as i32 + 1);
            let s = params.csf[k].eval(rho, k > 0);
            let a = acc[b].data_mut();
            for (i, (x, m)) in t.data().iter().zip(rc.data()).enumerate() {
                let d = (s * (x - m)).abs();
                if d > 0.0 {
                    let tr = d.powf(params.mask_p) / (1.0 + (s * m).abs().powf(params.mask_q));
                    a[i] += tr.powf(beta);
                }
            }
        }
    }
    let heatmap = ImagePlane::from_fn(prep.width, prep.height, |r, c| {
        let s: f64 = acc.iter().enumerate().map(|(b, p)| p.get(r >> b, c >> b)).sum();
        s.powf(1.0 / beta)
    });
    let pooled = (heatmap.data().iter().map(|v| v.powf(beta)).sum::<f64>() / heatmap.len() as f64).powf(1.0 / beta);
    Ok(JodScore { jod: 10.0 - params.alpha * pooled, heatmap })
}

/// Scores `test` against `reference` (both XYZ, cd/m^2). Identical inputs
/// give exactly 10.
pub fn jod_score(test: &[ImagePlane], reference: &[ImagePlane], view: &ViewingConfig, params: &VdpParamSet) -> Result<JodScore> {
    let prep = prepare(reference, view)?;
    score_prepared(test, &prep, view, params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JodDistribution {
    /// Sample-major: all paramsets for sample 0, then sample 1, ...
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Mean heatmap over every evaluation.
    pub heatmap: ImagePlane,
}

impl JodDistribution {
    fn from_samples(samples: Vec<f64>, heatmap: ImagePlane) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        JodDistribution { samples, mean, std, min, max, heatmap }
    }
}

/// Samples in each parallel batch; fixed so results do not depend on the
/// worker count.
const BATCH: usize = 16;

/// Monte Carlo JOD: draws `n_samples` test images from the per-pixel normal
/// (independent across pixels) and scores each against every paramset.
/// Sample `i` uses ChaCha stream `i` of `seed`.
pub fn jod_distribution(
    test: &UncertainImage,
    reference: &UncertainImage,
    view: &ViewingConfig,
    paramsets: &[VdpParamSet],
    n_samples: usize,
    seed: u64,
) -> Result<JodDistribution> {
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if paramsets.is_empty() {
        return Err(Error::Domain("need at least one parameter set".into()));
    }
    if test.channels() != 3 || reference.channels() != 3 {
        return Err(Error::Dimension("VDP inputs must be 3-channel XYZ".into()));
    }
    if test.width() != reference.width() || test.height() != reference.height() {
        return Err(Error::Dimension(format!(
            "test {}x{} vs reference {}x{}",
            test.width(),
            test.height(),
            reference.width(),
            reference.height()
        )));
    }
    for p in paramsets {
        p.validate()?;
    }
    let factors = covariance_factors(test)?;
    let prep = prepare(reference.mean(), view)?;
    let (w, h) = (test.width(), test.height());
    let mut samples = Vec::with_capacity(n_samples * paramsets.len());
    let mut heat = ImagePlane::zeros(w, h);
    for start in (0..n_samples).step_by(BATCH) {
        let end = (start + BATCH).min(n_samples);
        let batch: Vec<Result<Vec<JodScore>>> = (start..end)
            .into_par_iter()
            .map(|s| {
                let img = draw_gaussian(test, &factors, seed, s as u64);
                paramsets.iter().map(|p| score_prepared(&img, &prep, view, p)).collect()
            })
            .collect();
        for scores in batch {
            for sc in scores? {
                samples.push(sc.jod);
                for (a, v) in heat.data_mut().iter_mut().zip(sc.heatmap.data()) {
                    *a += v;
                }
            }
        }
    }
    let total = samples.len() as f64;
    Ok(JodDistribution::from_samples(samples, heat.map(|v| v / total)))
}

/// Rescaling for small stimuli: `min(11.35 - 20 (10 - jod), 10)`.
pub fn rescale_small_stimulus_jod(jod: f64) -> f64 {
    (11.35 - 20.0 * (10.0 - jod)).min(10.0)
}

/// Maps a JOD drop to a probability. No single mapping is treated as ground
/// truth; implementations are interchangeable.
pub trait Psychometric {
    fn probability(&self, jod_drop: f64) -> f64;
}

/// Cumulative normal with one JOD at 75%.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormalJod;

impl Psychometric for NormalJod {
    fn probability(&self, jod_drop: f64) -> f64 {
        0.5 * libm::erfc(-Z75 * jod_drop / std::f64::consts::SQRT_2)
    }
}
