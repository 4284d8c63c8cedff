use crate::image::{storage_to_coord, ImagePlane, Point};

#[derive(Clone, Copy, Debug)]
pub struct CornerOptions {
    /// Display pixel pitch on the sensor, raw pixels.
    pub pitch: f64,
    /// Search radius around each coarse corner, display pixels.
    pub search: f64,
    /// Spots dimmer than this fraction of the brightest one nearby are ignored.
    pub min_fraction: f64,
}

impl CornerOptions {
    pub fn new(pitch: f64) -> Self {
        CornerOptions { pitch, search: 3.0, min_fraction: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinedCorner {
    pub point: Point,
    /// False when no qualifying pixel pair was found; `point` is then the
    /// coarse guess.
    pub refined: bool,
}

/// Strict 3x3 local maxima inside a window, refined to subpixel precision by a
/// three-point Gaussian (log-parabola) fit along each axis. Coordinates are
/// centered raw pixels.
pub fn detect_spots(img: &ImagePlane, centre: Point, radius: f64, min_fraction: f64) -> Vec<Point> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let col0 = centre.x + (w as f64 - 1.0) * 0.5;
    let row0 = (h as f64 - 1.0) * 0.5 - centre.y;
    let c_lo = ((col0 - radius).floor().max(1.0)) as usize;
    let c_hi = ((col0 + radius).ceil().min(w as f64 - 2.0)).max(0.0) as usize;
    let r_lo = ((row0 - radius).floor().max(1.0)) as usize;
    let r_hi = ((row0 + radius).ceil().min(h as f64 - 2.0)).max(0.0) as usize;
    if c_lo > c_hi || r_lo > r_hi {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    let mut top = f64::NEG_INFINITY;
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let v = img.get(r, c);
            let strict = (0..3).all(|dr| {
                (0..3).all(|dc| (dr == 1 && dc == 1) || img.get(r + dr - 1, c + dc - 1) < v)
            });
            if strict {
                top = top.max(v);
                peaks.push((r, c, v));
            }
        }
    }
    peaks
        .into_iter()
        .filter(|&(_, _, v)| v >= min_fraction * top && v > 0.0)
        .map(|(r, c, _)| {
            let dx = peak_offset(img.get(r, c - 1), img.get(r, c), img.get(r, c + 1));
            let dy = peak_offset(img.get(r - 1, c), img.get(r, c), img.get(r + 1, c));
            let p = storage_to_coord(r, c, w, h);
            Point::new(p.x + dx, p.y - dy)
        })
        .collect()
}

/// Vertex of a parabola through `ln` of three samples; exact for Gaussians.
fn peak_offset(a: f64, b: f64, c: f64) -> f64 {
    let (num, den) = if a > 0.0 && b > 0.0 && c > 0.0 {
        let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
        (la - lc, 2.0 * (la - 2.0 * lb + lc))
    } else {
        (a - c, 2.0 * (a - 2.0 * b + c))
    };
    if den < 0.0 {
        (num / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Snaps each coarse checkerboard corner to the midpoint of the two white
/// display pixels that touch it diagonally.
///
/// A qualifying pair is two spots about one pixel apart along both axes
/// whose crossing diagonal holds no spot, which only happens where two
/// white blocks meet at a corner. The pair whose midpoint is closest to the
/// coarse guess wins.
pub fn refine_corners(capture: &ImagePlane, coarse: &[Point], opts: CornerOptions) -> Vec<RefinedCorner> {
    let pitch = opts.pitch;
    coarse
        .iter()
        .map(|&c| {
            let spots = detect_spots(capture, c, opts.search * pitch, opts.min_fraction);
            let near = |q: Point| spots.iter().any(|s| (s - q).norm() < 0.35 * pitch);
            let mut best: Option<(f64, Point)> = None;
            for (i, a) in spots.iter().enumerate() {
                for b in &spots[i + 1..] {
                    let d = b - a;
                    let (ax, ay) = (d.x.abs() / pitch, d.y.abs() / pitch);
                    if !(0.6..=1.4).contains(&ax) || !(0.6..=1.4).contains(&ay) {
                        continue;
                    }
                    let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
                    let across = nalgebra::Vector2::new(-d.y, d.x) * 0.5;
                    if near(mid + across) || near(mid - across) {
                        continue;
                    }
                    let dist = (mid - c).norm();
                    if best.is_none_or(|(bd, _)| dist < bd) {
                        best = Some((dist, mid));
                    }
                }
            }
            match best {
                Some((_, p)) => RefinedCorner { point: p, refined: true },
                None => RefinedCorner { point: c, refined: false },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gaussian spots of width `sigma` on an axis-aligned lattice with pitch
    /// `pitch`; `lit(i, j)` selects which display pixels are on.
    fn spots(w: usize, h: usize, pitch: f64, sigma: f64, lit: impl Fn(i64, i64) -> bool) -> ImagePlane {
        ImagePlane::from_fn(w, h, |r, c| {
            let p = storage_to_coord(r, c, w, h);
            let (u, v) = (p.x / pitch, p.y / pitch);
            let mut acc = 0.0;
            for i in (u.floor() as i64 - 2)..=(u.floor() as i64 + 2) {
                for j in (v.floor() as i64 - 2)..=(v.floor() as i64 + 2) {
                    if lit(i, j) {
                        let (cx, cy) = ((i as f64 + 0.5) * pitch, (j as f64 + 0.5) * pitch);
                        acc += (-((p.x - cx).powi(2) + (p.y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn gaussian_peak_is_exact() {
        let g = |x: f64| (-(x - 0.3).powi(2) / 2.0).exp();
        assert!((peak_offset(g(-1.0), g(0.0), g(1.0)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_corner() {
        let pitch = 4.0;
        // 4x4-pixel blocks; block parity decides colour.
        let board = spots(81, 81, pitch, 1.2, |i, j| (i.div_euclid(4) + j.div_euclid(4)).rem_euclid(2) == 0);
        let truth = Point::new(0.0, 0.0);
        let out = refine_corners(&board, &[Point::new(2.5, -3.0), truth], CornerOptions::new(pitch));
        for r in &out {
            assert!(r.refined);
            assert!((r.point - truth).norm() < 0.25 / pitch, "{:?}", r.point);
        }
    }

    #[test]
    fn lone_pixel_flagged() {
        let one = spots(41, 41, 4.0, 1.2, |i, j| i == 0 && j == 0);
        let out = refine_corners(&one, &[Point::new(0.0, 0.0)], CornerOptions::new(4.0));
        assert!(!out[0].refined);
        assert_eq!(out[0].point, Point::new(0.0, 0.0));
    }
}
