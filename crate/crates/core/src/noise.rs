//! Sensor noise model and its two-stage parameter estimation.
//!
//! A raw value is `I = k * (Pois((psi + d) t) g + N(0, s_read) g + N(0, s_adc))`,
//! so its variance given the mean is
//! `var = mean g k + s_read g^2 k^2 + s_adc k^2`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exposure settings of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureMeta {
    /// Exposure time in seconds.
    pub t: f64,
    /// Gain, ISO / 100.
    pub g: f64,
}

impl ExposureMeta {
    pub fn new(t: f64, g: f64) -> Result<Self> {
        let m = ExposureMeta { t, g };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Domain(format!("exposure time {} must be > 0", self.t)));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::Domain(format!("gain {} must be > 0", self.g)));
        }
        Ok(())
    }
}

/// Per-channel (r, g, b) noise parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// DN per photo-electron.
    pub k: [f64; 3],
    /// Read-noise variance, e^2.
    pub read_var: [f64; 3],
    /// ADC-noise variance, DN^2 before the `k` scaling.
    pub adc_var: [f64; 3],
    /// Dark current in electrons per second; zero unless measured.
    #[serde(default)]
    pub dark_offset: f64,
}

impl NoiseParams {
    /// Parameters fitted on a full-frame mirrorless camera (pixel-shift RAW).
    pub fn reference_camera() -> Self {
        NoiseParams {
            k: [1.303514, 0.713188, 1.307612],
            read_var: [1.733335, 2.074783, 1.643126],
            adc_var: [1.595734, 2.021769, 1.506513],
            dark_offset: 0.0,
        }
    }

    /// A noiseless camera with unit gain.
    pub fn noiseless() -> Self {
        NoiseParams { k: [1.0; 3], read_var: [0.0; 3], adc_var: [0.0; 3], dark_offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            if !(self.k[c] > 0.0 && self.k[c].is_finite()) {
                return Err(Error::Domain(format!("k[{c}] = {} must be > 0", self.k[c])));
            }
            if !(self.read_var[c] >= 0.0 && self.adc_var[c] >= 0.0) {
                return Err(Error::Domain(format!("negative noise variance in channel {c}")));
            }
        }
        if !(self.dark_offset >= 0.0 && self.dark_offset.is_finite()) {
            return Err(Error::Domain("dark offset must be >= 0".into()));
        }
        Ok(())
    }

    /// Draws one raw value for photo-electron rate `psi` (electrons / s).
    pub fn sample<R: Rng + ?Sized>(&self, psi: f64, meta: ExposureMeta, c: usize, rng: &mut R) -> f64 {
        let lambda = (psi.max(0.0) + self.dark_offset) * meta.t;
        let photons = if lambda > 0.0 {
            Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(lambda)
        } else {
            0.0
        };
        let read = gaussian(rng, self.read_var[c]);
        let adc = gaussian(rng, self.adc_var[c]);
        self.k[c] * (photons * meta.g + read * meta.g + adc)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> f64 {
    if var > 0.0 {
        Normal::new(0.0, var.sqrt()).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Predicted variance (DN^2) of a raw value with mean `mean_i` (DN).
pub fn predict_variance(mean_i: f64, meta: ExposureMeta, p: &NoiseParams, channel: usize) -> Result<f64> {
    if !(mean_i >= 0.0) {
        return Err(Error::Domain(format!("mean {mean_i} must be >= 0")));
    }
    let k = p.k[channel];
    let g = meta.g;
    Ok(mean_i * g * k + p.read_var[channel] * g * g * k * k + p.adc_var[channel] * k * k)
}

/// Sample mean and variance of one uniform patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

/// Stage-1 options.
#[derive(Clone, Copy, Debug)]
pub struct GainFit {
    /// Only patches with mean at or above this level (DN) enter the fit.
    pub mean_floor: f64,
}

impl Default for GainFit {
    fn default() -> Self {
        GainFit { mean_floor: 50.0 }
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Stage 1: ordinary least-squares slope of variance against mean, over `g`.
pub fn fit_gain(samples: &[MeanVar], gain: f64, opts: GainFit) -> Result<f64> {
    if !(gain > 0.0) {
        return Err(Error::Domain(format!("gain {gain} must be > 0")));
    }
    let used: Vec<MeanVar> = samples.iter().copied().filter(|s| s.mean >= opts.mean_floor).collect();
    if distinct(used.iter().map(|s| s.mean)) < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct mean levels above {} DN, got {}",
            opts.mean_floor,
            used.len()
        )));
    }
    let n = used.len() as f64;
    let mx = used.iter().map(|s| s.mean).sum::<f64>() / n;
    let my = used.iter().map(|s| s.var).sum::<f64>() / n;
    let sxy: f64 = used.iter().map(|s| (s.mean - mx) * (s.var - my)).sum();
    let sxx: f64 = used.iter().map(|s| (s.mean - mx).powi(2)).sum();
    let k = sxy / sxx / gain;
    if !(k > 0.0) {
        return Err(Error::Fit(format!("non-positive slope, k = {k}")));
    }
    Ok(k)
}

/// Dark-frame variance at one gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DarkSample {
    pub g: f64,
    pub var: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadAdcFit {
    pub read_var: f64,
    pub adc_var: f64,
    /// Set when a negative estimate was clamped to zero.
    pub clamped: bool,
}

/// Stage 2: least squares of `var / k^2 = read g^2 + adc` over dark frames.
pub fn fit_read_adc(dark: &[DarkSample], k: f64) -> Result<ReadAdcFit> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("k {k} must be > 0")));
    }
    if distinct(dark.iter().map(|s| s.g)) < 2 {
        return Err(Error::Fit("need at least 2 distinct gains".into()));
    }
    let pts: Vec<(f64, f64)> = dark.iter().map(|s| (s.g * s.g, s.var / (k * k))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let mut read = sxy / sxx;
    let mut adc = my - read * mx;
    let mut clamped = false;
    if read < 0.0 {
        clamped = true;
        read = 0.0;
        adc = my;
    }
    if adc < 0.0 {
        clamped = true;
        adc = 0.0;
        let sxx0: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        read = (pts.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx0).max(0.0);
    }
    if clamped {
        log::warn!("negative read/ADC variance estimate clamped to zero");
    }
    Ok(ReadAdcFit { read_var: read, adc_var: adc, clamped })
}
