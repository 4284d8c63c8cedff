//! Dark-defect detection on the display grid, precision-recall evaluation and
//! prediction of the false-positive count from the uncertainty map.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Point, UncertainImage, Uncertainty};

/// Ground truth of a synthetic defect pattern, in display coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectPattern {
    /// Side length of each square defect, display pixels.
    pub size: usize,
    /// Weber contrast against the white background.
    pub contrast: f64,
    pub centers: Vec<Point>,
    pub display_width: usize,
    pub display_height: usize,
}

/// Filtered maps derived from a display-grid image.
#[derive(Clone, Debug)]
pub struct MeanMaps {
    /// Local mean over roughly one defect.
    pub pixel: ImagePlane,
    /// Background mean over about ten display pixels.
    pub background: ImagePlane,
    /// Variance of the channel average, `sum_c var_c / 9`.
    pub variance: ImagePlane,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    /// Display coordinates.
    pub center: Point,
    pub score: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub detections: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub threshold: f64,
    pub detections: Vec<Detection>,
    pub predicted_false_positives: f64,
    pub sweep: Vec<PrPoint>,
}

/// Odd box size used for the pixel map: `o a_d - 1` rounded up to odd.
pub fn pixel_box_size(o: usize, a_d: usize) -> usize {
    let s = (o * a_d).saturating_sub(1).max(1);
    if s % 2 == 0 {
        s + 1
    } else {
        s
    }
}

/// Centered box mean of odd size `size`; windows are truncated at the border
/// and normalised by the number of pixels they cover.
pub fn box_filter(p: &ImagePlane, size: usize) -> Result<ImagePlane> {
    let (w, h) = (p.width(), p.height());
    if size == 0 || size % 2 == 0 {
        return Err(Error::Domain(format!("box size must be odd, got {size}")));
    }
    if size > w || size > h {
        return Err(Error::Dimension(format!("box of size {size} exceeds the {w}x{h} image")));
    }
    let r = size / 2;
    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let line = &p.data()[y * w..(y + 1) * w];
        window_mean(line, r, out);
    });
    let mut cols_t = vec![0.0; w * h];
    cols_t.par_chunks_mut(h).enumerate().for_each(|(x, out)| {
        let line: Vec<f64> = (0..h).map(|y| rows[y * w + x]).collect();
        window_mean(&line, r, out);
    });
    Ok(ImagePlane::from_fn(w, h, |y, x| cols_t[x * h + y]))
}

fn window_mean(line: &[f64], r: usize, out: &mut [f64]) {
    let n = line.len();
    let mut sum: f64 = line[..=r.min(n - 1)].iter().sum();
    let mut lo = 0usize;
    let mut hi = r.min(n - 1);
    for (i, o) in out.iter_mut().enumerate() {
        let want_lo = i.saturating_sub(r);
        let want_hi = (i + r).min(n - 1);
        while hi < want_hi {
            hi += 1;
            sum += line[hi];
        }
        while lo < want_lo {
            sum -= line[lo];
            lo += 1;
        }
        *o = sum / (hi - lo + 1) as f64;
    }
}

/// Builds the pixel map, background map and variance map from an RGB (or
/// single-channel) display-grid image in diagonal mode.
pub fn build_mean_maps(img: &UncertainImage, o: usize, a_d: usize) -> Result<MeanMaps> {
    let Uncertainty::Diagonal(vars) = img.uncertainty() else {
        return Err(Error::Domain("defect maps need the image before colour correction".into()));
    };
    if o == 0 || a_d == 0 {
        return Err(Error::Domain("oversampling and defect size must be >= 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    let nc = img.channels() as f64;
    let avg = ImagePlane::from_fn(w, h, |r, c| img.mean().iter().map(|m| m.get(r, c)).sum::<f64>() / nc);
    let variance =
        ImagePlane::from_fn(w, h, |r, c| vars.iter().map(|v| v.get(r, c)).sum::<f64>() / (nc * nc));
    Ok(MeanMaps {
        pixel: box_filter(&avg, pixel_box_size(o, a_d))?,
        background: box_filter(&avg, 10 * o + 1)?,
        variance,
    })
}

fn grid_to_display(row: usize, col: usize, o: usize, w_d: usize, h_d: usize) -> Point {
    let o = o as f64;
    Point::new(-(w_d as f64) / 2.0 + col as f64 / o, h_d as f64 / 2.0 - row as f64 / o)
}

/// Width of the border, in grid samples, where the background window is cut
/// off by the edge of the grid. Samples there see the display surround and
/// are left out of detection and of the false-positive prediction alike.
pub fn border(o: usize) -> usize {
    5 * o
}

fn interior(row: usize, col: usize, w: usize, h: usize, b: usize) -> bool {
    row >= b && col >= b && row + b < h && col + b < w
}

/// Candidate samples where `pixel < background * d_thr`, ordered from the
/// strongest deficit down (ties by position).
fn candidates(maps: &MeanMaps, d_thr: f64, o: usize) -> Vec<(f64, usize)> {
    let (mp, mb) = (maps.pixel.data(), maps.background.data());
    let (w, h, b) = (maps.pixel.width(), maps.pixel.height(), border(o));
    let mut c: Vec<(f64, usize)> = (0..mp.len())
        .into_par_iter()
        .filter(|&i| interior(i / w, i % w, w, h, b) && mp[i] < mb[i] * d_thr && mb[i] > 0.0)
        .map(|i| (mp[i] / mb[i], i))
        .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    c
}

/// Greedy non-maximum suppression: walks candidates from the best score and
/// keeps one unless a kept detection lies within `radius` grid samples.
fn suppress(cands: &[(f64, usize)], width: usize, radius: f64) -> Vec<usize> {
    let cell = radius.max(1.0);
    let key = |i: usize| (((i % width) as f64 / cell) as i64, ((i / width) as f64 / cell) as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for &(_, i) in cands {
        let (kx, ky) = key(i);
        let (x, y) = ((i % width) as f64, (i / width) as f64);
        let blocked = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                grid.get(&(kx + dx, ky + dy)).is_some_and(|v| {
                    v.iter().any(|&j| {
                        let (xj, yj) = ((j % width) as f64, (j / width) as f64);
                        (x - xj).powi(2) + (y - yj).powi(2) <= radius * radius
                    })
                })
            })
        });
        if !blocked {
            grid.entry((kx, ky)).or_default().push(i);
            kept.push(i);
        }
    }
    kept
}

/// Thresholds the maps and applies NMS with a radius of `nms_radius` grid
/// samples. Scores are `(M_b d_thr - M_p) / M_b`, strongest first.
pub fn detect(maps: &MeanMaps, d_thr: f64, o: usize, nms_radius: f64, display_width: usize, display_height: usize) -> Result<Vec<Detection>> {
    if !maps.pixel.same_dims(&maps.background) {
        return Err(Error::Dimension("pixel and background maps differ in size".into()));
    }
    if o == 0 {
        return Err(Error::Domain("oversampling must be >= 1".into()));
    }
    let w = maps.pixel.width();
    let cands = candidates(maps, d_thr, o);
    let ratio: HashMap<usize, f64> = cands.iter().map(|&(r, i)| (i, r)).collect();
    Ok(suppress(&cands, w, nms_radius)
        .into_iter()
        .map(|i| {
            let (row, col) = (i / w, i % w);
            Detection {
                center: grid_to_display(row, col, o, display_width, display_height),
                score: d_thr - ratio[&i],
                row,
                col,
            }
        })
        .collect())
}

/// Greedy one-to-one matching, strongest detection first, to the nearest
/// unmatched truth within one display pixel. Returns the match count.
pub fn match_detections(dets: &[Detection], truth: &DefectPattern) -> usize {
    let mut used = vec![false; truth.centers.len()];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut tp = 0;
    for i in order {
        let p = dets[i].center;
        let best = truth
            .centers
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, c)| (j, (c - p).norm()))
            .filter(|&(_, d)| d <= 1.0)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

/// Precision and recall at each threshold. Precision with no detections is 1.
pub fn pr_sweep(
    maps: &MeanMaps,
    thresholds: &[f64],
    o: usize,
    nms_radius: f64,
    truth: &DefectPattern,
) -> Result<Vec<PrPoint>> {
    if truth.centers.is_empty() {
        return Err(Error::Domain("precision-recall needs at least one true defect".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let dets = detect(maps, t, o, nms_radius, truth.display_width, truth.display_height)?;
            let tp = match_detections(&dets, truth);
            Ok(PrPoint {
                threshold: t,
                detections: dets.len(),
                true_positives: tp,
                precision: if dets.is_empty() { 1.0 } else { tp as f64 / dets.len() as f64 },
                recall: tp as f64 / truth.centers.len() as f64,
            })
        })
        .collect()
}

/// Trapezoidal area under the precision-recall curve, anchored at
/// (recall 0, precision 1).
pub fn pr_auc(sweep: &[PrPoint]) -> Result<f64> {
    if sweep.len() < 2 {
        return Err(Error::Domain("need at least two sweep points".into()));
    }
    let mut pts: Vec<(f64, f64)> = sweep.iter().map(|p| (p.recall, p.precision)).collect();
    pts.push((0.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area = pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum::<f64>();
    Ok(area.clamp(0.0, 1.0))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Grid indices of the display-pixel centres (nearest sample for odd `o`).
pub fn display_centres(o: usize, display_width: usize, display_height: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..display_height).flat_map(move |k| (0..display_width).map(move |l| ((o * (2 * k + 1)) / 2, (o * (2 * l + 1)) / 2)))
}

/// Expected number of false positives: `sum_s Phi((d_thr - 1) M_b(s) / sigma(s))`
/// over display-pixel centres away from the border.
pub fn predict_false_positives(maps: &MeanMaps, d_thr: f64, o: usize, display_width: usize, display_height: usize) -> Result<f64> {
    let (w, h) = (maps.background.width(), maps.background.height());
    if w != o * display_width + 1 || h != o * display_height + 1 {
        return Err(Error::Dimension(format!(
            "maps are {w}x{h}, expected a {}x{} grid",
            o * display_width + 1,
            o * display_height + 1
        )));
    }
    let b = border(o);
    let centres: Vec<(usize, usize)> =
        display_centres(o, display_width, display_height).filter(|&(r, c)| interior(r, c, w, h, b)).collect();
    let terms = centres
        .par_iter()
        .map(|&(r, c)| {
            let var = maps.variance.get(r, c);
            if !(var > 0.0) {
                return Err(Error::Domain(format!("sigma <= 0 at grid sample (row {r}, col {c})")));
            }
            Ok(normal_cdf((d_thr - 1.0) * maps.background.get(r, c) / var.sqrt()))
        })
        .collect::<Result<Vec<f64>>>()?;
    // fixed-order sum for determinism
    Ok(terms.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maps_from(mean: ImagePlane, var: f64, o: usize, a_d: usize) -> MeanMaps {
        let v = ImagePlane::filled(mean.width(), mean.height(), var);
        build_mean_maps(&UncertainImage::diagonal(vec![mean], vec![v]).unwrap(), o, a_d).unwrap()
    }

    #[test]
    fn box_sizes() {
        assert_eq!(pixel_box_size(4, 1), 3);
        assert_eq!(pixel_box_size(3, 1), 3);
        assert_eq!(pixel_box_size(1, 1), 1);
        assert_eq!(pixel_box_size(4, 4), 15);
    }

    #[test]
    fn uniform_maps_are_constant() {
        let m = maps_from(ImagePlane::filled(60, 50, 7.0), 1.0, 4, 1);
        for p in [&m.pixel, &m.background] {
            assert!(p.data().iter().all(|v| (v - 7.0).abs() < 1e-12));
        }
    }

    #[test]
    fn filter_too_large() {
        let img = UncertainImage::exact(vec![ImagePlane::filled(20, 20, 1.0)]).unwrap();
        assert!(build_mean_maps(&img, 4, 1).is_err());
    }

    #[test]
    fn box_matches_brute_force() {
        // one dark display pixel (o = 4) at contrast 0.6 on a unit field
        let (o, w_d, h_d) = (4, 12, 12);
        let (w, h) = (o * w_d + 1, o * h_d + 1);
        let plane = ImagePlane::from_fn(w, h, |r, c| if (24..28).contains(&r) && (24..28).contains(&c) { 0.4 } else { 1.0 });
        let m = maps_from(plane.clone(), 1.0, o, 1);
        for (r, c) in [(26usize, 26usize), (24, 24), (23, 27), (5, 5), (0, 0), (48, 10)] {
            let mut s = 0.0;
            let mut n = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        s += plane.get(rr as usize, cc as usize);
                        n += 1.0;
                    }
                }
            }
            assert!((m.pixel.get(r, c) - s / n).abs() < 1e-12);
        }
        assert!((m.pixel.get(26, 26) - 0.4).abs() < 1e-12);
        assert!((m.pixel.get(24, 24) - (1.0 - 0.6 * 4.0 / 9.0)).abs() < 1e-12);
    }

    fn maps_direct(mp: Vec<f64>, mb: Vec<f64>, w: usize, h: usize) -> MeanMaps {
        MeanMaps {
            pixel: ImagePlane::new(w, h, mp).unwrap(),
            background: ImagePlane::new(w, h, mb).unwrap(),
            variance: ImagePlane::filled(w, h, 1.0),
        }
    }

    #[test]
    fn nms_keeps_strongest() {
        let mut mp = vec![1.0; 169];
        mp[84] = 0.6; // score 0.3 at D = 0.9
        mp[85] = 0.7; // score 0.2
        let m = maps_direct(mp, vec![1.0; 169], 13, 13);
        let d = detect(&m, 0.9, 1, 1.0, 12, 12).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].score - 0.3).abs() < 1e-12);
        assert!(detect(&m, 0.5, 1, 1.0, 12, 12).unwrap().is_empty());
    }

    #[test]
    fn border_is_ignored() {
        let mut mp = vec![1.0; 169];
        mp[13 * 2 + 6] = 0.1;
        mp[13 * 6 + 11] = 0.1;
        let m = maps_direct(mp, vec![1.0; 169], 13, 13);
        assert!(detect(&m, 0.9, 1, 1.0, 12, 12).unwrap().is_empty());
    }

    #[test]
    fn pr_extremes() {
        let truth = DefectPattern { size: 1, contrast: 1.0, centers: vec![Point::new(0.0, 0.0)], display_width: 4, display_height: 4 };
        let perfect = |t| PrPoint { threshold: t, detections: 1, true_positives: 1, precision: 1.0, recall: 1.0 };
        assert_eq!(pr_auc(&[perfect(0.9), perfect(0.95)]).unwrap(), 1.0);
        let silent = |t| PrPoint { threshold: t, detections: 0, true_positives: 0, precision: 1.0, recall: 0.0 };
        assert_eq!(pr_auc(&[silent(0.9), silent(0.95)]).unwrap(), 0.0);
        let m = maps_direct(vec![1.0; 25], vec![1.0; 25], 5, 5);
        let s = pr_sweep(&m, &[0.9, 0.95], 1, 1.0, &truth).unwrap();
        assert_eq!(pr_auc(&s).unwrap(), 0.0);
        let empty = DefectPattern { centers: vec![], ..truth };
        assert!(pr_sweep(&m, &[0.9], 1, 1.0, &empty).is_err());
    }

    #[test]
    fn false_positive_values() {
        let (o, w_d, h_d) = (2, 30, 24);
        let g = |v: f64| ImagePlane::filled(o * w_d + 1, o * h_d + 1, v);
        let m = MeanMaps { pixel: g(100.0), background: g(100.0), variance: g(4.0) };
        // five display pixels of border on each side
        let pixels = ((w_d - 10) * (h_d - 10)) as f64;
        let n = predict_false_positives(&m, 1.0, o, w_d, h_d).unwrap();
        assert!((n - 0.5 * pixels).abs() < 1e-12);
        let n = predict_false_positives(&m, 0.95, o, w_d, h_d).unwrap();
        // Phi(-2.5)
        assert!((n / pixels - 0.006209665325776132).abs() < 1e-12);
        let bad = MeanMaps { variance: g(0.0), ..m };
        assert!(predict_false_positives(&bad, 0.95, o, w_d, h_d).is_err());
    }

    proptest! {
        #[test]
        fn nfp_monotone(d1 in 0.8f64..1.0, d2 in 0.8f64..1.0, var in 0.1f64..50.0) {
            let g = |v: f64| ImagePlane::filled(29, 29, v);
            let m = MeanMaps { pixel: g(10.0), background: ImagePlane::from_fn(29, 29, |r, c| 10.0 + (r + c) as f64), variance: g(var) };
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let lo_n = predict_false_positives(&m, lo, 2, 14, 14).unwrap();
            prop_assert!(lo_n > 0.0);
            prop_assert!(lo_n <= predict_false_positives(&m, hi, 2, 14, 14).unwrap());
        }

        #[test]
        fn recall_monotone(vals in prop::collection::vec(0.5f64..1.2, 441), t1 in 0.7f64..1.0, t2 in 0.7f64..1.0) {
            let m = maps_direct(vals, vec![1.0; 441], 21, 21);
            let truth = DefectPattern {
                size: 1, contrast: 1.0,
                centers: vec![Point::new(0.0, 0.0), Point::new(-3.0, 2.0), Point::new(4.0, -4.0)],
                display_width: 20, display_height: 20,
            };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let s = pr_sweep(&m, &[lo, hi], 1, 1.5, &truth).unwrap();
            prop_assert!(s[0].recall <= s[1].recall);
            prop_assert!(s.iter().all(|p| (0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall)));
        }
    }
}
