use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Half of an 11-tap Kaiser-windowed (beta 4) half-band low-pass, centre
/// tap first. The centre is exactly 1/2 and the odd taps sum to 1/4 per
/// side, so both polyphase components of `expand` have unit gain.
const HALF_BAND: [f64; 6] = [0.5, 0.29860056958614967, 0.0, -0.054265844111005726, 0.0, 0.005665274524856027];

/// Band-pass levels (finest first) and the low-pass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub bands: Vec<ImagePlane>,
    pub base: ImagePlane,
}

/// Largest level count accepted for an image of this size.
pub fn max_levels(width: usize, height: usize) -> usize {
    let m = width.min(height) as f64;
    if m < 4.0 {
        0
    } else {
        (m.log2() - 2.0).floor() as usize
    }
}

fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn taps() -> impl Iterator<Item = (isize, f64)> {
    (-5isize..=5).map(|k| (k, HALF_BAND[k.unsigned_abs()])).filter(|&(_, w)| w != 0.0)
}

fn blur_rows(p: &ImagePlane) -> ImagePlane {
    let (w, h) = (p.width(), p.height());
    ImagePlane::from_fn(w, h, |r, c| taps().map(|(k, t)| t * p.get(r, reflect(c as isize + k, w))).sum())
}

fn blur_cols(p: &ImagePlane) -> ImagePlane {
    let (w, h) = (p.width(), p.height());
    ImagePlane::from_fn(w, h, |r, c| taps().map(|(k, t)| t * p.get(reflect(r as isize + k, h), c)).sum())
}

fn blur(p: &ImagePlane) -> ImagePlane {
    blur_cols(&blur_rows(p))
}

/// Low-pass and keep every second sample in both directions.
pub fn reduce(p: &ImagePlane) -> ImagePlane {
    let b = blur(p);
    ImagePlane::from_fn(p.width().div_ceil(2), p.height().div_ceil(2), |r, c| b.get(2 * r, 2 * c))
}

/// Zero-insert up to `width` x `height` and interpolate.
pub fn expand(p: &ImagePlane, width: usize, height: usize) -> ImagePlane {
    let up = ImagePlane::from_fn(width, height, |r, c| {
        if r % 2 == 0 && c % 2 == 0 && r / 2 < p.height() && c / 2 < p.width() {
            4.0 * p.get(r / 2, c / 2)
        } else {
            0.0
        }
    });
    blur(&up)
}

fn sub(a: &ImagePlane, b: &ImagePlane) -> ImagePlane {
    ImagePlane::from_fn(a.width(), a.height(), |r, c| a.get(r, c) - b.get(r, c))
}

/// Gaussian levels `0..=levels` (level 0 is the input).
pub fn gaussian_levels(p: &ImagePlane, levels: usize) -> Result<Vec<ImagePlane>> {
    let max = max_levels(p.width(), p.height());
    if levels > max {
        return Err(Error::Domain(format!(
            "{levels} pyramid levels requested but a {}x{} image allows at most {max}",
            p.width(),
            p.height()
        )));
    }
    let mut g = vec![p.clone()];
    for _ in 0..levels {
        let next = reduce(g.last().expect("non-empty"));
        g.push(next);
    }
    Ok(g)
}

/// Laplacian pyramid: `bands[b] = G_b - expand(G_{b+1})`, `base = G_levels`.
pub fn laplacian_pyramid(p: &ImagePlane, levels: usize) -> Result<Pyramid> {
    let mut g = gaussian_levels(p, levels)?;
    let base = g.pop().expect("non-empty");
    let mut bands = Vec::with_capacity(levels);
    let mut coarser = &base;
    for fine in g.iter().rev() {
        bands.push(sub(fine, &expand(coarser, fine.width(), fine.height())));
        coarser = fine;
    }
    bands.reverse();
    Ok(Pyramid { bands, base })
}

/// Inverse of [`laplacian_pyramid`].
pub fn collapse(pyr: &Pyramid) -> ImagePlane {
    let mut acc = pyr.base.clone();
    for band in pyr.bands.iter().rev() {
        let e = expand(&acc, band.width(), band.height());
        acc = ImagePlane::from_fn(band.width(), band.height(), |r, c| band.get(r, c) + e.get(r, c));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(a: &ImagePlane, b: &ImagePlane) -> f64 {
        (a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn kernel_has_unit_gain() {
        let s: f64 = taps().map(|(_, t)| t).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image() {
        let p = ImagePlane::filled(64, 48, 3.5);
        let pyr = laplacian_pyramid(&p, 3).unwrap();
        for b in &pyr.bands {
            assert!(b.data().iter().all(|v| v.abs() < 1e-12));
        }
        assert!(pyr.base.data().iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn reconstruction() {
        let p = ImagePlane::from_fn(77, 53, |r, c| ((r * 31 + c * 17) % 13) as f64 + (r as f64 * 0.3).sin());
        let pyr = laplacian_pyramid(&p, max_levels(77, 53)).unwrap();
        assert!(rms(&collapse(&pyr), &p) <= 1e-6);
    }

    #[test]
    fn too_many_levels() {
        let p = ImagePlane::zeros(32, 32);
        assert_eq!(max_levels(32, 32), 3);
        assert!(laplacian_pyramid(&p, 4).is_err());
    }

    #[test]
    fn sinusoid_lands_in_its_octave() {
        // Band b spans (0.25, 0.5] / 2^b cycles per pixel; probe its
        // geometric centre.
        let n = 256;
        for b in 0..4 {
            let f = 0.5 / 2f64.powf(b as f64 + 0.5);
            let p = ImagePlane::from_fn(n, n, |_, c| (std::f64::consts::TAU * f * c as f64 + 0.3).sin());
            let pyr = laplacian_pyramid(&p, 5).unwrap();
            let energy = |k: usize, q: &ImagePlane| {
                // skip a border strip so edge handling does not count
                let m = 16 >> k.min(4);
                let mut e = 0.0;
                for r in 0..q.height() {
                    for c in m..q.width().saturating_sub(m) {
                        e += q.get(r, c).powi(2);
                    }
                }
                e * 4f64.powi(k as i32)
            };
            let mut es: Vec<f64> = pyr.bands.iter().enumerate().map(|(k, q)| energy(k, q)).collect();
            es.push(energy(5, &pyr.base));
            let total: f64 = es.iter().sum();
            assert!(es[b] / total >= 0.8, "band {b}: {:?}", es.iter().map(|e| e / total).collect::<Vec<_>>());
        }
    }
}
