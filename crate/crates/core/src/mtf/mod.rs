//! Optical MTF: slanted-edge measurement, a two-Gaussian model, and Wiener
//! deconvolution with variance propagation.

mod esf;
mod fit;
mod wiener;

pub use esf::{esf_to_mtf, estimate_esf, EdgeLine, EsfOptions, EsfSamples, MtfSamples};
pub use fit::{fit_mtf, FitReport};
pub use wiener::{wiener_deconvolve, Deconvolved, SignalPsd, WienerFilter};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_floor() -> f64 {
    0.5
}

/// Sum of two Gaussians in frequency (cycles/pixel), clamped from below.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtfModel {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    #[serde(default = "default_floor")]
    pub clamp_floor: f64,
}

impl MtfModel {
    pub fn from_params(p: [f64; 6]) -> Self {
        MtfModel { a1: p[0], b1: p[1], c1: p[2], a2: p[3], b2: p[4], c2: p[5], clamp_floor: 0.5 }
    }

    pub fn params(&self) -> [f64; 6] {
        [self.a1, self.b1, self.c1, self.a2, self.b2, self.c2]
    }

    /// Fitted lens of the reference camera.
    pub fn reference_camera() -> Self {
        Self::from_params([0.00174, 0.67193, 0.12362, 1.30353, -0.11405, 0.22962])
    }

    /// A perfect lens: `M = 1` at every frequency.
    pub fn identity() -> Self {
        Self::from_params([0.0, 0.0, 1.0, 1.0, 0.0, 1e12])
    }

    pub fn validate(&self) -> Result<()> {
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite MTF parameter".into()));
        }
        if self.c1 == 0.0 || self.c2 == 0.0 {
            return Err(Error::Domain("MTF widths c1, c2 must be non-zero".into()));
        }
        if !(self.clamp_floor > 0.0 && self.clamp_floor.is_finite()) {
            return Err(Error::Domain("clamp floor must be > 0".into()));
        }
        Ok(())
    }

    /// Unclamped model value.
    pub fn eval_raw(&self, w: f64) -> f64 {
        let g = |a: f64, b: f64, c: f64| a * (-((w - b) / c).powi(2)).exp();
        g(self.a1, self.b1, self.c1) + g(self.a2, self.b2, self.c2)
    }

    /// Clamped model value, never below `clamp_floor`.
    pub fn eval(&self, w: f64) -> f64 {
        self.eval_raw(w).max(self.clamp_floor)
    }
}
