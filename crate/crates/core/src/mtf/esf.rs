use crate::error::{Error, Result};
use crate::image::{storage_to_coord, ImagePlane};

/// Oversampling of the edge profile: four bins per pixel.
pub const ESF_PITCH: f64 = 0.25;

/// A straight edge in centered pixel coordinates.
///
/// The line's direction is `angle` radians clockwise from vertical; a point's
/// signed distance is `x cos(angle) - y sin(angle) - offset`, positive on the
/// right-hand side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeLine {
    pub angle: f64,
    pub offset: f64,
}

impl EdgeLine {
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        x * self.angle.cos() - y * self.angle.sin() - self.offset
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EsfOptions {
    /// Profile extent on each side of the edge, pixels.
    pub half_width: f64,
}

impl Default for EsfOptions {
    fn default() -> Self {
        EsfOptions { half_width: 16.0 }
    }
}

/// Edge spread function sampled at bin centres.
#[derive(Clone, Debug, PartialEq)]
pub struct EsfSamples {
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

/// MTF sampled on `[0, 0.5]` cycles/pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct MtfSamples {
    pub freq: Vec<f64>,
    pub value: Vec<f64>,
}

/// Bins pixel values by signed distance to the edge at quarter-pixel pitch.
pub fn estimate_esf(edge: &ImagePlane, line: EdgeLine, opts: EsfOptions) -> Result<EsfSamples> {
    if !line.angle.is_finite() || !line.offset.is_finite() {
        return Err(Error::Domain("degenerate edge line".into()));
    }
    let tilt = {
        let a = line.angle.to_degrees().rem_euclid(90.0);
        a.min(90.0 - a)
    };
    if !(2.0 - 1e-9..=10.0 + 1e-9).contains(&tilt) {
        return Err(Error::Domain(format!("edge tilt {tilt:.2} deg outside [2, 10]")));
    }
    let hw = opts.half_width;
    if !(hw >= 8.0) {
        return Err(Error::Domain("ESF half-width must be >= 8 px".into()));
    }
    let nbins = (2.0 * hw / ESF_PITCH).round() as usize;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    let (w, h) = (edge.width(), edge.height());
    for r in 0..h {
        for c in 0..w {
            let p = storage_to_coord(r, c, w, h);
            let d = line.distance(p.x, p.y);
            let b = ((d + hw) / ESF_PITCH).floor();
            if b >= 0.0 && (b as usize) < nbins {
                sum[b as usize] += edge.get(r, c);
                count[b as usize] += 1;
            }
        }
    }
    let filled: Vec<usize> = (0..nbins).filter(|&i| count[i] > 0).collect();
    if filled.len() < 2 {
        return Err(Error::Domain("edge line does not cross the region".into()));
    }
    let mut values: Vec<f64> = (0..nbins).map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { f64::NAN }).collect();
    fill_gaps(&mut values, &filled);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        return Err(Error::Domain("no edge: profile is constant".into()));
    }
    let positions = (0..nbins).map(|i| -hw + (i as f64 + 0.5) * ESF_PITCH).collect();
    Ok(EsfSamples { positions, values })
}

/// Linear interpolation across empty bins, nearest value past the ends.
fn fill_gaps(values: &mut [f64], filled: &[usize]) {
    let first = filled[0];
    let last = *filled.last().unwrap();
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for pair in filled.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            values[i] = values[a] * (1.0 - t) + values[b] * t;
        }
    }
}

/// Differentiates, windows and transforms an ESF into MTF samples.
///
/// The LSF is the difference of neighbouring bins placed at their midpoint,
/// weighted by a Hann window centred on the edge and spanning the profile.
pub fn esf_to_mtf(esf: &EsfSamples) -> Result<MtfSamples> {
    let n = esf.values.len();
    if n < 64 || esf.positions.len() != n {
        return Err(Error::Domain(format!("need at least 64 ESF samples, got {n}")));
    }
    if esf.positions.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::Domain("ESF positions must increase".into()));
    }
    let dx = (esf.positions[n - 1] - esf.positions[0]) / (n - 1) as f64;
    let half = 0.5 * n as f64 * dx;
    let centre = 0.5 * (esf.positions[0] + esf.positions[n - 1]);
    let mut lsf = Vec::with_capacity(n - 1);
    let mut at = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let x = 0.5 * (esf.positions[i] + esf.positions[i + 1]) - centre;
        let win = 0.5 * (1.0 + (std::f64::consts::PI * x / half).cos());
        lsf.push((esf.values[i + 1] - esf.values[i]) / dx * win);
        at.push(x);
    }
    let dc: f64 = lsf.iter().sum();
    if !(dc.abs() > 0.0) || lsf.iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("constant ESF has no line spread".into()));
    }
    let span = n as f64 * dx;
    let kmax = (0.5 * span + 1e-9).floor() as usize;
    let mut freq = Vec::with_capacity(kmax + 1);
    let mut value = Vec::with_capacity(kmax + 1);
    for k in 0..=kmax {
        let f = k as f64 / span;
        let (mut re, mut im) = (0.0, 0.0);
        for (v, x) in lsf.iter().zip(&at) {
            let ph = -2.0 * std::f64::consts::PI * f * x;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        freq.push(f);
        value.push((re * re + im * im).sqrt() / dc.abs());
    }
    value[0] = 1.0;
    Ok(MtfSamples { freq, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_image(w: usize, h: usize, line: EdgeLine, f: impl Fn(f64) -> f64) -> ImagePlane {
        ImagePlane::from_fn(w, h, |r, c| {
            let p = storage_to_coord(r, c, w, h);
            f(line.distance(p.x, p.y))
        })
    }

    fn line() -> EdgeLine {
        EdgeLine { angle: 5f64.to_radians(), offset: 0.0 }
    }

    #[test]
    fn ideal_step() {
        let img = edge_image(64, 96, line(), |d| if d >= 0.0 { 1.0 } else { 0.0 });
        let esf = estimate_esf(&img, line(), EsfOptions::default()).unwrap();
        let mid = esf.values.len() / 2;
        assert!(esf.values[..mid].iter().all(|&v| v == 0.0));
        assert!(esf.values[mid..].iter().all(|&v| v == 1.0));
        let mtf = esf_to_mtf(&esf).unwrap();
        assert_eq!(mtf.value[0], 1.0);
        for v in &mtf.value {
            assert!((v - 1.0).abs() < 0.01, "{v}");
        }
        assert!((mtf.freq.last().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_blurred_step() {
        let sigma = 1.0;
        let erf = |d: f64| 0.5 * (1.0 + libm::erf(d / (sigma * std::f64::consts::SQRT_2)));
        let img = edge_image(64, 128, line(), erf);
        let esf = estimate_esf(&img, line(), EsfOptions::default()).unwrap();
        let worst = esf.positions.iter().zip(&esf.values).map(|(x, v)| (v - erf(*x)).abs()).fold(0.0, f64::max);
        assert!(worst < 0.01, "max ESF deviation {worst}");
        let mtf = esf_to_mtf(&esf).unwrap();
        for (f, v) in mtf.freq.iter().zip(&mtf.value) {
            if *f <= 0.4 {
                let want = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * f * f).exp();
                assert!((v - want).abs() < 0.02, "f={f} got {v} want {want}");
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let flat = ImagePlane::filled(64, 64, 3.0);
        assert!(estimate_esf(&flat, line(), EsfOptions::default()).is_err());
        let step = edge_image(64, 64, line(), |d| if d >= 0.0 { 1.0 } else { 0.0 });
        assert!(estimate_esf(&step, EdgeLine { angle: f64::NAN, offset: 0.0 }, EsfOptions::default()).is_err());
        assert!(estimate_esf(&step, EdgeLine { angle: 5f64.to_radians(), offset: 500.0 }, EsfOptions::default()).is_err());
        assert!(estimate_esf(&step, EdgeLine { angle: 0.0, offset: 0.0 }, EsfOptions::default()).is_err());
        let const_esf = EsfSamples { positions: (0..64).map(|i| i as f64 * 0.25).collect(), values: vec![1.0; 64] };
        assert!(esf_to_mtf(&const_esf).is_err());
    }
}
