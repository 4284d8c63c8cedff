use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SceneTruth;
use crate::defects::DefectPattern;
use crate::error::{Error, Result};
use crate::fft::filter_radial;
use crate::image::{storage_to_coord, ImagePlane, Point};
use crate::mtf::{EdgeLine, MtfModel};

/// Minimum spacing between defect centres, display pixels.
pub const DEFECT_SPACING: f64 = 12.0;

/// White field with `count` dark squares of side `a_d` at Weber contrast
/// `c_d`, placed by rejection sampling at least 12 px apart and 12 px from
/// the border.
pub fn gen_defect_pattern(
    a_d: usize,
    c_d: f64,
    count: usize,
    display_width: usize,
    display_height: usize,
    seed: u64,
) -> Result<(SceneTruth, DefectPattern)> {
    if a_d == 0 {
        return Err(Error::Domain("defect size must be >= 1".into()));
    }
    if !(c_d > 0.0 && c_d <= 1.0) {
        return Err(Error::Domain(format!("contrast {c_d} outside (0, 1]")));
    }
    let margin = DEFECT_SPACING as usize;
    if display_width < 2 * margin + a_d || display_height < 2 * margin + a_d {
        return Err(Error::Domain("display too small for defects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corners: Vec<(usize, usize)> = Vec::with_capacity(count);
    let mut centers: Vec<Point> = Vec::with_capacity(count);
    let mut tries = 0;
    while centers.len() < count {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::Domain(format!("could only place {} of {count} defects", centers.len())));
        }
        let c0 = rng.random_range(margin..=display_width - margin - a_d);
        let r0 = rng.random_range(margin..=display_height - margin - a_d);
        let p = Point::new(
            -(display_width as f64) / 2.0 + c0 as f64 + a_d as f64 / 2.0,
            display_height as f64 / 2.0 - r0 as f64 - a_d as f64 / 2.0,
        );
        if centers.iter().all(|q| (q - p).norm() >= DEFECT_SPACING) {
            centers.push(p);
            corners.push((r0, c0));
        }
    }
    let mut plane = ImagePlane::filled(display_width, display_height, 1.0);
    for &(r0, c0) in &corners {
        for r in r0..r0 + a_d {
            for c in c0..c0 + a_d {
                plane.set(r, c, 1.0 - c_d);
            }
        }
    }
    let pattern = DefectPattern { size: a_d, contrast: c_d, centers, display_width, display_height };
    Ok((SceneTruth::gray(plane, 1.0)?, pattern))
}

/// Elliptical Gaussian bump (standard deviations half the width and height)
/// over a flat field, normalised so the spatial mean luminance is `mean_lum`.
pub fn gen_uniformity_stimulus(contrast: f64, mean_lum: f64, display_width: usize, display_height: usize) -> Result<SceneTruth> {
    if !(0.0..1.0).contains(&contrast) {
        return Err(Error::Domain(format!("contrast {contrast} outside [0, 1)")));
    }
    if !(mean_lum > 0.0 && mean_lum.is_finite()) {
        return Err(Error::Domain("mean luminance must be > 0".into()));
    }
    let (w, h) = (display_width, display_height);
    let (sx, sy) = (w as f64 / 2.0, h as f64 / 2.0);
    let bump = ImagePlane::from_fn(w, h, |r, c| {
        let p = storage_to_coord(r, c, w, h);
        (-(p.x * p.x) / (2.0 * sx * sx) - (p.y * p.y) / (2.0 * sy * sy)).exp()
    });
    let mu = bump.mean();
    let lum = bump.map(|g| mean_lum * (1.0 + contrast * g - contrast * mu));
    let peak = lum.max();
    SceneTruth::gray(lum.map(|v| (v / peak).min(1.0)), peak)
}

/// Checkerboard with square blocks of `block` pixels (top-left block white)
/// and the display coordinates of its interior corners.
pub fn checkerboard(display_width: usize, display_height: usize, block: usize) -> Result<(SceneTruth, Vec<Point>)> {
    if block == 0 || display_width < 2 * block || display_height < 2 * block {
        return Err(Error::Domain("checkerboard needs at least 2x2 blocks".into()));
    }
    let plane = ImagePlane::from_fn(display_width, display_height, |r, c| ((r / block + c / block) % 2 == 0) as u8 as f64);
    let mut corners = Vec::new();
    for i in 1..display_height.div_ceil(block) {
        for j in 1..display_width.div_ceil(block) {
            if i * block < display_height && j * block < display_width {
                corners.push(Point::new(
                    -(display_width as f64) / 2.0 + (j * block) as f64,
                    display_height as f64 / 2.0 - (i * block) as f64,
                ));
            }
        }
    }
    Ok((SceneTruth::gray(plane, 1.0)?, corners))
}

/// A slowly varying colour scene with drives in about [0.2, 0.9].
pub fn smooth_scene(display_width: usize, display_height: usize, scale: f64) -> Result<SceneTruth> {
    let (w, h) = (display_width as f64, display_height as f64);
    let tau = std::f64::consts::TAU;
    let planes = std::array::from_fn(|k| {
        let ph = k as f64 * 2.1;
        ImagePlane::from_fn(display_width, display_height, |r, c| {
            let (x, y) = (c as f64 / w, r as f64 / h);
            0.55 + 0.2 * (tau * (0.6 * x + 0.3 * y) + ph).sin() + 0.15 * (tau * (0.4 * x - 0.5 * y) + 0.5 * ph).cos()
        })
    });
    SceneTruth::new(planes, scale)
}

/// Raw capture of a straight edge: area-integrated step from `low` to
/// `high` (high on the positive side), blurred by the unclamped `mtf`.
pub fn render_edge(
    width: usize,
    height: usize,
    line: EdgeLine,
    low: f64,
    high: f64,
    mtf: Option<&MtfModel>,
    subsamples: usize,
) -> ImagePlane {
    let n = subsamples.max(1);
    let step = ImagePlane::from_fn(width, height, |r, c| {
        let p = storage_to_coord(r, c, width, height);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = p.x + (j as f64 + 0.5) / n as f64 - 0.5;
                let y = p.y - (i as f64 + 0.5) / n as f64 + 0.5;
                acc += if line.distance(x, y) >= 0.0 { high } else { low };
            }
        }
        acc / (n * n) as f64
    });
    match mtf {
        Some(m) => filter_radial(&step, |f| m.eval_raw(f)),
        None => step,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defect_contrast_and_spacing() {
        let (scene, pat) = gen_defect_pattern(2, 0.2, 30, 200, 150, 4).unwrap();
        assert_eq!(pat.centers.len(), 30);
        let p = &scene.planes[0];
        assert!(p.data().iter().all(|&v| v == 1.0 || (v - 0.8).abs() < 1e-15));
        assert_eq!(p.data().iter().filter(|&&v| v < 1.0).count(), 30 * 4);
        let (full, _) = gen_defect_pattern(1, 1.0, 10, 100, 100, 1).unwrap();
        assert_eq!(full.planes[0].min(), 0.0);
    }

    #[test]
    fn defects_on_uhd_display() {
        let (_, pat) = gen_defect_pattern(4, 1.0, 100, 3840, 2160, 11).unwrap();
        for (i, a) in pat.centers.iter().enumerate() {
            for b in &pat.centers[i + 1..] {
                assert!((a - b).norm() >= 12.0);
            }
        }
    }

    #[test]
    fn defect_centre_covers_the_square() {
        let (scene, pat) = gen_defect_pattern(4, 1.0, 5, 60, 60, 2).unwrap();
        for c in &pat.centers {
            let (r, col) = crate::image::coord_to_storage(*c, 60, 60).unwrap();
            assert_eq!(scene.planes[0].get(r, col), 0.0);
        }
    }

    #[test]
    fn impossible_placement() {
        assert!(gen_defect_pattern(1, 1.0, 500, 60, 60, 0).is_err());
    }

    #[test]
    fn uniformity_stimulus() {
        let flat = gen_uniformity_stimulus(0.0, 142.5, 64, 36).unwrap();
        assert!(flat.planes[0].data().iter().all(|&v| v == 1.0));
        assert_eq!(flat.scale, 142.5);
        let s = gen_uniformity_stimulus(0.1, 142.5, 384, 216).unwrap();
        let mean = s.planes[0].mean() * s.scale;
        assert!((mean - 142.5).abs() < 0.1);
        assert!(s.planes[0].get(108, 192) > s.planes[0].get(0, 0));
    }

    #[test]
    fn checkerboard_corners() {
        let (scene, corners) = checkerboard(40, 30, 10).unwrap();
        assert_eq!(corners.len(), 3 * 2);
        assert_eq!(scene.planes[0].get(0, 0), 1.0);
        assert_eq!(scene.planes[0].get(0, 10), 0.0);
        assert!(corners.contains(&Point::new(-10.0, 5.0)));
    }

    #[test]
    fn edge_levels() {
        let line = EdgeLine { angle: 5f64.to_radians(), offset: 0.0 };
        let e = render_edge(40, 40, line, 0.1, 0.9, None, 4);
        assert!((e.get(20, 0) - 0.1).abs() < 1e-15);
        assert!((e.get(20, 39) - 0.9).abs() < 1e-15);
    }
}
