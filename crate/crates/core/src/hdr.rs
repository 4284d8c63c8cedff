//! Exposure-stack merging into radiance with per-pixel variance.
//!
//! Each raw value is first converted to a photo-electron rate
//! `x = I / (t g k)`; the merged radiance is `sum(k x t) / sum(t)`, which is
//! `k * psi` in DN per second at unit gain. Its variance is
//! `sum(k^2 x t + k^2 s_read + k^2 s_adc / g^2) / sum(t)^2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask, UncertainImage};
use crate::noise::{ExposureMeta, NoiseParams};

/// One raw capture: DN planes (1 or 3 channels) and its exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub planes: Vec<ImagePlane>,
    pub meta: ExposureMeta,
}

#[derive(Clone, Debug)]
pub struct ExposureStack {
    pub frames: Vec<Frame>,
    pub params: NoiseParams,
    /// Raw values at or above this level are treated as clipped.
    pub saturation: f64,
}

/// Fraction of full scale above which a sample counts as saturated.
pub const DEFAULT_SATURATION_FRACTION: f64 = 0.98;

impl ExposureStack {
    /// Builds a stack, using `0.98 * full_scale` as the clip level.
    pub fn new(frames: Vec<Frame>, params: NoiseParams, full_scale: f64) -> Result<Self> {
        let s = ExposureStack { frames, params, saturation: DEFAULT_SATURATION_FRACTION * full_scale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| Error::Domain("empty exposure stack".into()))?;
        let c = first.planes.len();
        if c != 1 && c != 3 {
            return Err(Error::Dimension(format!("{c} channels, expected 1 or 3")));
        }
        let (w, h) = (first.planes[0].width(), first.planes[0].height());
        for (i, f) in self.frames.iter().enumerate() {
            f.meta.validate()?;
            if f.planes.len() != c || f.planes.iter().any(|p| p.width() != w || p.height() != h) {
                return Err(Error::Dimension(format!("frame {i} does not match frame 0")));
            }
        }
        self.params.validate()?;
        if !(self.saturation > 0.0) {
            return Err(Error::Domain("saturation level must be > 0".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.frames[0].planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].planes[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].planes.len()
    }
}

#[derive(Clone, Debug)]
pub struct Merged {
    pub image: UncertainImage,
    /// True where every sample of some channel was saturated.
    pub invalid: Mask,
}

/// Merges an exposure stack. Pixels saturated in every frame fall back to the
/// shortest exposure and are flagged in [`Merged::invalid`].
pub fn merge(stack: &ExposureStack) -> Result<Merged> {
    merge_with(stack, &stack.params)
}

/// [`merge`] using noise parameters other than the ones stored in the stack.
pub fn merge_with(stack: &ExposureStack, p: &NoiseParams) -> Result<Merged> {
    stack.validate()?;
    p.validate()?;
    let (w, h, nc) = (stack.width(), stack.height(), stack.channels());
    let n = w * h;
    let shortest = stack
        .frames
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.meta.t.total_cmp(&b.1.meta.t))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut means = Vec::with_capacity(nc);
    let mut vars = Vec::with_capacity(nc);
    let mut invalid = vec![false; n];
    for c in 0..nc {
        let k = p.k[c];
        let read = p.read_var[c];
        let adc = p.adc_var[c];
        let merged: Vec<(f64, f64, bool)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pixel = |frames: &mut dyn Iterator<Item = &Frame>| {
                    let (mut num, mut den, mut var) = (0.0, 0.0, 0.0);
                    for f in frames {
                        let (t, g) = (f.meta.t, f.meta.g);
                        let raw = f.planes[c].data()[i];
                        let x = raw / (t * g * k);
                        num += k * x * t;
                        den += t;
                        var += k * k * (x * t).max(0.0) + k * k * read + k * k * adc / (g * g);
                    }
                    (num, den, var)
                };
                let mut ok = stack.frames.iter().filter(|f| f.planes[c].data()[i] < stack.saturation);
                let (num, den, var) = pixel(&mut ok);
                if den > 0.0 {
                    (num / den, var / (den * den), false)
                } else {
                    let (num, den, var) = pixel(&mut std::iter::once(&stack.frames[shortest]));
                    (num / den, var / (den * den), true)
                }
            })
            .collect();
        for (i, m) in merged.iter().enumerate() {
            invalid[i] |= m.2;
        }
        means.push(ImagePlane::new(w, h, merged.iter().map(|m| m.0).collect())?);
        vars.push(ImagePlane::new(w, h, merged.iter().map(|m| m.1).collect())?);
    }
    Ok(Merged { image: UncertainImage::diagonal(means, vars)?, invalid })
}
