use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::MtfModel;
use crate::error::{Error, Result};
use crate::fft::{crop, mirror_pad, radial_grid, Fft2};
use crate::image::{ImagePlane, UncertainImage, Uncertainty};

/// How the signal power spectrum is estimated from the mean image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalPsd {
    /// `|F(mean)|^2` bin by bin.
    Periodogram,
    /// `|F(mean)|^2` averaged over a `(2r+1)^2` box of neighbouring bins.
    ///
    /// When the mean is itself a noisy measurement the raw periodogram lets
    /// each bin's gain track that bin's own noise, so the filtered noise is
    /// larger than the white-noise formula predicts; averaging breaks that
    /// coupling.
    Smoothed { radius: usize },
}

/// A Wiener filter designed on the mirror-padded `2w x 2h` grid.
#[derive(Clone, Debug)]
pub struct WienerFilter {
    width: usize,
    height: usize,
    gain: Vec<f64>,
    multiplier: f64,
    factor: ImagePlane,
}

impl WienerFilter {
    /// Designs `G = M S / (M^2 S + N)` for an image like `mean` with white
    /// noise power `noise`. With `noise = 0` this is the inverse filter `1/M`.
    pub fn design(mean: &ImagePlane, noise: f64, model: &MtfModel, psd: SignalPsd) -> Result<Self> {
        model.validate()?;
        let (w, h) = (mean.width(), mean.height());
        if w < 8 || h < 8 {
            return Err(Error::Dimension(format!("{w}x{h} is smaller than 8x8")));
        }
        if !mean.all_finite() {
            return Err(Error::Domain("non-finite input to Wiener filter".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Domain(format!("noise power {noise} must be finite and >= 0")));
        }
        let (pw, ph) = (2 * w, 2 * h);
        let radial = radial_grid(pw, ph);
        let gain: Vec<f64> = if noise == 0.0 {
            radial.par_iter().map(|&r| 1.0 / model.eval(r)).collect()
        } else {
            let mut buf = mirror_pad(mean);
            Fft2::new(pw, ph).forward(&mut buf);
            let mut s: Vec<f64> = buf.iter().map(|v| v.norm_sqr()).collect();
            if let SignalPsd::Smoothed { radius } = psd {
                s = box_smooth_periodic(&s, pw, ph, radius);
            }
            radial
                .par_iter()
                .zip(s.par_iter())
                .map(|(&r, &s)| {
                    let m = model.eval(r);
                    m * s / (m * m * s + noise)
                })
                .collect()
        };
        let multiplier = gain.iter().map(|g| g * g).sum::<f64>() / gain.len() as f64;
        let factor = mirror_variance_factor(&gain, w, h, multiplier);
        Ok(WienerFilter { width: w, height: h, gain, multiplier, factor })
    }

    /// Mean of `|G|^2` over all frequencies; scales white-noise variance.
    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// Exact output variance per unit of white input noise at every pixel,
    /// including the correlation the mirror padding introduces between a
    /// pixel and its reflections. Equals [`Self::multiplier`] away from the
    /// borders once the filter's impulse response has decayed.
    pub fn variance_factor(&self) -> &ImagePlane {
        &self.factor
    }

    /// Filter gain on the padded frequency grid, row-major.
    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    /// Filters one plane with the designed gain.
    pub fn apply(&self, plane: &ImagePlane) -> Result<ImagePlane> {
        if plane.width() != self.width || plane.height() != self.height {
            return Err(Error::Dimension("plane does not match the filter design".into()));
        }
        let fft = Fft2::new(2 * self.width, 2 * self.height);
        let mut buf: Vec<Complex64> = mirror_pad(plane);
        fft.forward(&mut buf);
        buf.par_iter_mut().zip(self.gain.par_iter()).for_each(|(v, g)| *v *= *g);
        fft.inverse(&mut buf);
        Ok(crop(&buf, self.width, self.height))
    }
}

/// With `g` the impulse response of the padded filter and `R` the
/// reflections that build the padding, output variance for unit white noise
/// is `sum_R sum_x g(p - x) g(p - R x)`. The identity term is the
/// multiplier; the reflected terms are autocorrelations of `g` evaluated at
/// twice the distance to the mirror axes, read off inverse transforms of
/// `|G|^2` and its row/column marginals.
fn mirror_variance_factor(gain: &[f64], w: usize, h: usize, multiplier: f64) -> ImagePlane {
    let (pw, ph) = (2 * w, 2 * h);
    let p = (pw * ph) as f64;
    let g2: Vec<f64> = gain.iter().map(|g| g * g).collect();
    let mut both: Vec<Complex64> = g2.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Fft2::new(pw, ph).inverse(&mut both);
    let kxy = |tx: usize, ty: usize| both[(ty % ph) * pw + tx % pw].re / p.sqrt();
    let marginal = |n: usize, sum: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut buf: Vec<Complex64> = (0..n).map(|k| Complex64::new(sum(k), 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|v| v.re / p).collect()
    };
    let kx = marginal(pw, &|kx| (0..ph).map(|ky| g2[ky * pw + kx]).sum());
    let ky = marginal(ph, &|ky| g2[ky * pw..(ky + 1) * pw].iter().sum());
    ImagePlane::from_fn(w, h, |r, c| {
        let (tx, ty) = (2 * c + 1, 2 * r + 1);
        (multiplier + kx[tx % pw] + ky[ty % ph] + kxy(tx, ty)).max(0.0)
    })
}

fn box_smooth_periodic(s: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return s.to_vec();
    }
    let k = (2 * r + 1) as f64;
    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let src = &s[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for d in 0..=2 * r {
                acc += src[(x + w * (r / w + 1) + d - r) % w];
            }
            *o = acc / k;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, o)| {
        for d in 0..=2 * r {
            let yy = (y + h * (r / h + 1) + d - r) % h;
            let src = &rows[yy * w..(yy + 1) * w];
            for (a, b) in o.iter_mut().zip(src) {
                *a += b / k;
            }
        }
    });
    out
}

#[derive(Clone, Debug)]
pub struct Deconvolved {
    pub image: UncertainImage,
    /// Variance multiplier applied to each channel.
    pub multiplier: Vec<f64>,
}

/// Deconvolves every channel; the noise power of each is the spatial mean of
/// its variance plane, and the output variance is the input variance scaled
/// by the filter's per-pixel variance factor (the multiplier in the
/// interior).
pub fn wiener_deconvolve(img: &UncertainImage, model: &MtfModel, psd: SignalPsd) -> Result<Deconvolved> {
    let Uncertainty::Diagonal(vars) = img.uncertainty() else {
        return Err(Error::Domain("Wiener deconvolution needs diagonal-mode input".into()));
    };
    let mut means = Vec::new();
    let mut out_vars = Vec::new();
    let mut multiplier = Vec::new();
    for (mean, var) in img.mean().iter().zip(vars) {
        let filt = WienerFilter::design(mean, var.mean(), model, psd)?;
        means.push(filt.apply(mean)?);
        let f = filt.variance_factor();
        out_vars.push(ImagePlane::from_fn(var.width(), var.height(), |r, c| var.get(r, c) * f.get(r, c)));
        multiplier.push(filt.multiplier());
    }
    Ok(Deconvolved { image: UncertainImage::diagonal(means, out_vars)?, multiplier })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::filter_radial;

    fn scene(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, |r, c| {
            let (x, y) = (c as f64, r as f64);
            10.0 + 3.0 * (0.2 * x).sin() * (0.15 * y).cos() + if c > w / 2 { 4.0 } else { 0.0 }
        })
    }

    fn constant(m: f64) -> MtfModel {
        MtfModel { clamp_floor: 0.5, ..MtfModel::from_params([0.0, 0.0, 1.0, m, 0.0, 1e12]) }
    }

    #[test]
    fn identity_filter_keeps_input() {
        let mean = scene(16, 12);
        let img = UncertainImage::diagonal(vec![mean.clone()], vec![ImagePlane::zeros(16, 12)]).unwrap();
        let out = wiener_deconvolve(&img, &MtfModel::identity(), SignalPsd::Periodogram).unwrap();
        assert!((out.multiplier[0] - 1.0).abs() < 1e-12);
        for (a, b) in out.image.mean()[0].data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(out.image.variance(0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_modulation_doubles() {
        let mean = scene(16, 16);
        let var = ImagePlane::filled(16, 16, 0.0);
        let img = UncertainImage::diagonal(vec![mean.clone()], vec![var]).unwrap();
        let out = wiener_deconvolve(&img, &constant(0.5), SignalPsd::Periodogram).unwrap();
        assert!((out.multiplier[0] - 4.0).abs() < 1e-12);
        for (a, b) in out.image.mean()[0].data().iter().zip(mean.data()) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
        // the multiplier applies to any variance plane handed in
        let f = WienerFilter::design(&mean, 0.0, &constant(0.5), SignalPsd::Periodogram).unwrap();
        assert!(f.gain().iter().all(|&g| (g - 2.0).abs() < 1e-12));
    }

    #[test]
    fn reconvolution_restores_input() {
        let m = MtfModel::reference_camera();
        let x = scene(32, 24);
        let f = WienerFilter::design(&x, 0.0, &m, SignalPsd::Periodogram).unwrap();
        let y = filter_radial(&f.apply(&x).unwrap(), |r| m.eval(r));
        let rms = (x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        let scale = (x.data().iter().map(|a| a * a).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rms / scale < 0.01);
    }

    #[test]
    fn joint_scaling_invariance() {
        let m = MtfModel::reference_camera();
        let x = scene(16, 16);
        let a = 3.5;
        for psd in [SignalPsd::Periodogram, SignalPsd::Smoothed { radius: 2 }] {
            let f1 = WienerFilter::design(&x, 0.7, &m, psd).unwrap();
            let f2 = WienerFilter::design(&x.map(|v| a * v), 0.7 * a * a, &m, psd).unwrap();
            let y1 = f1.apply(&x).unwrap();
            let y2 = f2.apply(&x.map(|v| a * v)).unwrap();
            for (p, q) in y1.data().iter().zip(y2.data()) {
                assert!((a * p - q).abs() < 1e-9 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn smoothing_preserves_constant_spectrum() {
        let s = vec![2.0; 6 * 5];
        assert!(box_smooth_periodic(&s, 6, 5, 1).iter().all(|v| (v - 2.0).abs() < 1e-12));
        let mut d = vec![0.0; 7 * 7];
        d[0] = 9.0;
        let out = box_smooth_periodic(&d, 7, 7, 1);
        assert!((out.iter().sum::<f64>() - 9.0).abs() < 1e-12);
        assert!((out[6 * 7 + 6] - 1.0).abs() < 1e-12, "wraps around both axes");
    }

    #[test]
    fn rejects_small_or_covariance_input() {
        let small = UncertainImage::exact(vec![ImagePlane::filled(4, 4, 1.0)]).unwrap();
        assert!(wiener_deconvolve(&small, &MtfModel::identity(), SignalPsd::Periodogram).is_err());
    }

    #[test]
    fn variance_factor_matches_impulse_responses() {
        let (w, h) = (12, 10);
        let mean = scene(w, h);
        for noise in [0.0, 0.5] {
            let f = WienerFilter::design(&mean, noise, &MtfModel::reference_camera(), SignalPsd::Smoothed { radius: 1 }).unwrap();
            let mut exact = ImagePlane::zeros(w, h);
            for q in 0..w * h {
                let mut e = ImagePlane::zeros(w, h);
                e.data_mut()[q] = 1.0;
                let resp = f.apply(&e).unwrap();
                for (a, v) in exact.data_mut().iter_mut().zip(resp.data()) {
                    *a += v * v;
                }
            }
            for (a, b) in exact.data().iter().zip(f.variance_factor().data()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}
