use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CameraGeometry;
use crate::error::{Error, Result};
use crate::image::{to_storage_f, ImagePlane, Mask, Point, UncertainImage, Uncertainty};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Nearest,
    Bilinear,
    Bicubic,
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Kernel::Nearest),
            "bilinear" => Ok(Kernel::Bilinear),
            "bicubic" => Ok(Kernel::Bicubic),
            _ => Err(Error::Config(format!("unknown kernel {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplingSpec {
    /// Grid samples per display pixel.
    pub oversampling: usize,
    pub kernel: Kernel,
}

impl ResamplingSpec {
    pub fn new(oversampling: usize, kernel: Kernel) -> Self {
        ResamplingSpec { oversampling, kernel }
    }
}

#[derive(Clone, Debug)]
pub struct Resampled {
    pub image: UncertainImage,
    /// True where the kernel footprint left the capture or touched an
    /// invalid input pixel.
    pub invalid: Mask,
}

/// Kernel taps `(row, col, mean weight, variance weight)` at a storage position.
fn taps(kernel: Kernel, row: f64, col: f64) -> Vec<(i64, i64, f64, f64)> {
    match kernel {
        Kernel::Nearest => {
            let c = (col + 0.5).floor() as i64;
            let r = (row - 0.5).ceil() as i64;
            vec![(r, c, 1.0, 1.0)]
        }
        Kernel::Bilinear => {
            let (r0, c0) = (row.floor(), col.floor());
            let (fr, fc) = (row - r0, col - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            let mut v = Vec::with_capacity(4);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let w = wr * wc;
                    if w != 0.0 {
                        v.push((r0 + dr, c0 + dc, w, w));
                    }
                }
            }
            v
        }
        Kernel::Bicubic => {
            let (r0, c0) = (row.floor(), col.floor());
            let (fr, fc) = (row - r0, col - c0);
            let wr = cubic_weights(fr);
            let wc = cubic_weights(fc);
            let mut v = Vec::with_capacity(16);
            let mut pos_sum = 0.0;
            for (i, a) in wr.iter().enumerate() {
                for (j, b) in wc.iter().enumerate() {
                    let w = a * b;
                    if w != 0.0 {
                        pos_sum += w.max(0.0);
                        v.push((r0 as i64 + i as i64 - 1, c0 as i64 + j as i64 - 1, w, w.max(0.0)));
                    }
                }
            }
            for t in &mut v {
                t.3 /= pos_sum;
            }
            v
        }
    }
}

/// Keys cubic convolution weights (a = -0.5) for taps at -1, 0, 1, 2.
fn cubic_weights(t: f64) -> [f64; 4] {
    let a = -0.5;
    let near = |x: f64| ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    [far(1.0 + t), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Samples the capture on the `(o w_d + 1) x (o h_d + 1)` display grid.
///
/// Grid sample `(i, j)` sits at display point
/// `(-w_d/2 + j/o, h_d/2 - i/o)`. Mean and variance use the same kernel
/// weights, which overstates the variance of an average of independent
/// pixels and so errs on the conservative side. Bicubic negative lobes are
/// dropped (and the rest renormalised) for the variance.
pub fn resample_to_display(
    img: &UncertainImage,
    input_invalid: Option<&Mask>,
    geo: &CameraGeometry,
    spec: ResamplingSpec,
    display_width: usize,
    display_height: usize,
) -> Result<Resampled> {
    let Uncertainty::Diagonal(vars) = img.uncertainty() else {
        return Err(Error::Domain("resampling expects diagonal-mode input".into()));
    };
    if spec.oversampling == 0 {
        return Err(Error::Domain("oversampling must be >= 1".into()));
    }
    if display_width == 0 || display_height == 0 {
        return Err(Error::Dimension("empty display".into()));
    }
    let (w, h) = (img.width(), img.height());
    if geo.sensor_width != w || geo.sensor_height != h {
        return Err(Error::Dimension(format!(
            "geometry is for a {}x{} sensor, image is {w}x{h}",
            geo.sensor_width, geo.sensor_height
        )));
    }
    let o = spec.oversampling as f64;
    let gw = spec.oversampling * display_width + 1;
    let gh = spec.oversampling * display_height + 1;
    let nc = img.channels();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..gh)
        .into_par_iter()
        .map(|i| {
            let mut means = vec![0.0; gw * nc];
            let mut var = vec![0.0; gw * nc];
            let mut bad = vec![false; gw];
            for j in 0..gw {
                let s = Point::new(-(display_width as f64) / 2.0 + j as f64 / o, display_height as f64 / 2.0 - i as f64 / o);
                let p = geo.display_to_raw(s);
                let (row, col) = to_storage_f(p, w, h);
                let t = if row.is_finite() && col.is_finite() { taps(spec.kernel, row, col) } else { Vec::new() };
                let inside = !t.is_empty()
                    && t.iter().all(|&(r, c, _, _)| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w);
                let clean = inside
                    && input_invalid.is_none_or(|m| t.iter().all(|&(r, c, _, _)| !m[r as usize * w + c as usize]));
                bad[j] = !clean;
                let clamp = |r: i64, c: i64| {
                    let r = r.clamp(0, h as i64 - 1) as usize;
                    let c = c.clamp(0, w as i64 - 1) as usize;
                    r * w + c
                };
                for ch in 0..nc {
                    let (md, vd) = (img.mean()[ch].data(), vars[ch].data());
                    let (mut m, mut v) = (0.0, 0.0);
                    if t.is_empty() {
                        let k = clamp(row.round() as i64, col.round() as i64);
                        m = md[k];
                        v = vd[k];
                    }
                    for &(r, c, wm, wv) in &t {
                        let k = clamp(r, c);
                        m += wm * md[k];
                        v += wv * vd[k];
                    }
                    means[ch * gw + j] = m;
                    var[ch * gw + j] = v.max(0.0);
                }
            }
            (means, var, bad)
        })
        .collect();
    let mut mean_planes = Vec::with_capacity(nc);
    let mut var_planes = Vec::with_capacity(nc);
    for ch in 0..nc {
        let m: Vec<f64> = rows.iter().flat_map(|r| r.0[ch * gw..(ch + 1) * gw].iter().copied()).collect();
        let v: Vec<f64> = rows.iter().flat_map(|r| r.1[ch * gw..(ch + 1) * gw].iter().copied()).collect();
        mean_planes.push(ImagePlane::new(gw, gh, m)?);
        var_planes.push(ImagePlane::new(gw, gh, v)?);
    }
    let invalid: Mask = rows.into_iter().flat_map(|r| r.2).collect();
    let frac = invalid.iter().filter(|&&b| b).count() as f64 / invalid.len() as f64;
    if frac > 0.01 {
        return Err(Error::Coverage(format!("{:.2}% of the display grid is not covered by the capture", 100.0 * frac)));
    }
    Ok(Resampled { image: UncertainImage::diagonal(mean_planes, var_planes)?, invalid })
}

#[cfg(test)]
mod tests {
    use super::super::{DistortionParams, Homography};
    use super::*;
    use proptest::prelude::*;

    fn plane(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, |r, c| (r * 31 + c * 7) as f64 % 13.0 + 0.5)
    }

    fn geo_scale(scale: f64, w: usize, h: usize) -> CameraGeometry {
        let hm = Homography::from_rows([[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        CameraGeometry::new(hm, DistortionParams::default(), w, h)
    }

    #[test]
    fn identity_nearest_is_exact() {
        let (m, v) = (plane(5, 5), plane(5, 5).map(|x| x * 0.1));
        let img = UncertainImage::diagonal(vec![m.clone()], vec![v.clone()]).unwrap();
        let out = resample_to_display(&img, None, &geo_scale(1.0, 5, 5), ResamplingSpec::new(1, Kernel::Nearest), 4, 4).unwrap();
        assert_eq!(out.image.mean()[0], m);
        assert_eq!(out.image.variance(0), &v);
        assert!(out.invalid.iter().all(|&b| !b));
    }

    #[test]
    fn bilinear_on_lattice_is_exact() {
        // o = 3 with raw pitch 1/3 display px: grid samples land on raw centres.
        let m = plane(13, 10);
        let img = UncertainImage::diagonal(vec![m.clone()], vec![m.clone()]).unwrap();
        let out =
            resample_to_display(&img, None, &geo_scale(3.0, 13, 10), ResamplingSpec::new(3, Kernel::Bilinear), 4, 3).unwrap();
        assert_eq!(out.image.width(), 13);
        assert_eq!(out.image.height(), 10);
        for (a, b) in out.image.mean()[0].data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_error() {
        let img = UncertainImage::exact(vec![plane(8, 8)]).unwrap();
        let r = resample_to_display(&img, None, &geo_scale(1.0, 8, 8), ResamplingSpec::new(3, Kernel::Bilinear), 12, 12);
        assert!(matches!(r, Err(Error::Coverage(_))));
    }

    #[test]
    fn cubic_weights_partition_unity() {
        for i in 0..=10 {
            let w = cubic_weights(i as f64 / 10.0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn conservative_variance(row in 1.0f64..5.0, col in 1.0f64..5.0, vars in prop::collection::vec(0.0f64..10.0, 64)) {
            for kernel in [Kernel::Bilinear, Kernel::Bicubic] {
                let t = taps(kernel, row, col);
                let wsum: f64 = t.iter().map(|x| x.2).sum();
                prop_assert!((wsum - 1.0).abs() < 1e-12);
                let idx = |r: i64, c: i64| (r.clamp(0, 7) * 8 + c.clamp(0, 7)) as usize;
                let ours: f64 = t.iter().map(|&(r, c, _, wv)| wv * vars[idx(r, c)]).sum();
                let exact: f64 = t.iter().map(|&(r, c, wm, _)| wm * wm * vars[idx(r, c)]).sum();
                if t.iter().all(|x| x.2 >= 0.0) {
                    prop_assert!(ours >= exact - 1e-12);
                }
            }
        }
    }
}
