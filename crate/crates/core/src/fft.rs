//! 2-D FFT helpers on mirror-padded planes.
//!
//! Planes are extended by whole-plane reflection to `2w x 2h`, which makes the
//! periodic extension continuous at the borders, then transformed with an
//! orthonormal DFT so that white noise of variance `s` has expected power `s`
//! in every bin.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::ImagePlane;

pub struct Fft2 {
    pub width: usize,
    pub height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        assert_eq!(buf.len(), w * h);
        buf.par_chunks_mut(w).for_each(|r| row.process(r));
        let mut t = transpose(buf, w, h);
        t.par_chunks_mut(h).for_each(|c| col.process(c));
        let back = transpose(&t, h, w);
        let scale = 1.0 / ((w * h) as f64).sqrt();
        buf.par_iter_mut().zip(back.par_iter()).for_each(|(d, s)| *d = s * scale);
    }
}

fn transpose(src: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); w * h];
    dst.par_chunks_mut(h).enumerate().for_each(|(x, col)| {
        for (y, v) in col.iter_mut().enumerate() {
            *v = src[y * w + x];
        }
    });
    dst
}

/// Signed frequency of DFT bin `k` of an `n`-point transform, cycles/sample.
pub fn bin_freq(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Radial frequency `sqrt(fx^2 + fy^2)` of every bin, row-major.
pub fn radial_grid(w: usize, h: usize) -> Vec<f64> {
    let fx: Vec<f64> = (0..w).map(|k| bin_freq(k, w)).collect();
    let mut out = Vec::with_capacity(w * h);
    for ky in 0..h {
        let fy = bin_freq(ky, h);
        out.extend(fx.iter().map(|x| (x * x + fy * fy).sqrt()));
    }
    out
}

/// Reflects a plane to `2w x 2h` as a complex buffer.
pub fn mirror_pad(p: &ImagePlane) -> Vec<Complex64> {
    let (w, h) = (p.width(), p.height());
    let (pw, ph) = (2 * w, 2 * h);
    let src = p.data();
    let mut out = vec![Complex64::new(0.0, 0.0); pw * ph];
    out.par_chunks_mut(pw).enumerate().for_each(|(y, row)| {
        let sy = if y < h { y } else { ph - 1 - y };
        for (x, v) in row.iter_mut().enumerate() {
            let sx = if x < w { x } else { pw - 1 - x };
            *v = Complex64::new(src[sy * w + sx], 0.0);
        }
    });
    out
}

/// Takes the top-left `w x h` real part of a padded buffer.
pub fn crop(buf: &[Complex64], w: usize, h: usize) -> ImagePlane {
    let pw = 2 * w;
    ImagePlane::from_fn(w, h, |y, x| buf[y * pw + x].re)
}

/// Multiplies the spectrum of `p` by a real radial response.
pub fn filter_radial(p: &ImagePlane, response: impl Fn(f64) -> f64 + Sync) -> ImagePlane {
    let (w, h) = (p.width(), p.height());
    let fft = Fft2::new(2 * w, 2 * h);
    let mut buf = mirror_pad(p);
    fft.forward(&mut buf);
    let radial = radial_grid(2 * w, 2 * h);
    buf.par_iter_mut().zip(radial.par_iter()).for_each(|(v, &r)| *v *= response(r));
    fft.inverse(&mut buf);
    crop(&buf, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_parseval() {
        let (w, h) = (6, 5);
        let data: Vec<Complex64> = (0..w * h).map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0)).collect();
        let fft = Fft2::new(w, h);
        let mut buf = data.clone();
        fft.forward(&mut buf);
        let e0: f64 = data.iter().map(|v| v.norm_sqr()).sum();
        let e1: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-12);
        fft.inverse(&mut buf);
        for (a, b) in data.iter().zip(&buf) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_filter() {
        let p = ImagePlane::from_fn(7, 4, |r, c| (r * 7 + c) as f64);
        let q = filter_radial(&p, |_| 1.0);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn frequencies() {
        assert_eq!(bin_freq(0, 8), 0.0);
        assert_eq!(bin_freq(4, 8), 0.5);
        assert_eq!(bin_freq(5, 8), -0.375);
    }
}
