use nalgebra::Matrix3;

use super::{apply_distortion, estimate_homography, norm_radius, CameraGeometry, DistortionParams, Homography};
use crate::error::{Error, Result};
use crate::image::Point;
use crate::lm::{minimize, LmOptions};

#[derive(Clone, Debug)]
pub struct DistortionFit {
    pub geometry: CameraGeometry,
    /// RMS residual per coordinate, raw pixels.
    pub rms: f64,
    /// Cost after each accepted optimiser step.
    pub trace: Vec<f64>,
}

/// Jointly fits the homography and lens distortion to `display -> raw`
/// correspondences, minimising `sum |R u(H s / R) - p|^2`.
///
/// Starts from a DLT on the raw points, then refines all 13 parameters with
/// Levenberg–Marquardt. Internally the display and raw coordinates are both
/// scaled to unit size so the parameters are of comparable magnitude.
pub fn fit_distortion(pairs: &[(Point, Point)], sensor_width: usize, sensor_height: usize) -> Result<DistortionFit> {
    if pairs.len() < 50 {
        return Err(Error::Fit(format!("need at least 50 correspondences, got {}", pairs.len())));
    }
    let r = norm_radius(sensor_width, sensor_height);
    let sd = pairs.iter().map(|(s, _)| s.coords.norm()).fold(0.0, f64::max).max(1e-9);
    let init = estimate_homography(pairs)?.homography;
    // g_n = Hn s_n with s_n = s / sd and g_n = g / r
    let scale_in = Matrix3::new(sd, 0.0, 0.0, 0.0, sd, 0.0, 0.0, 0.0, 1.0);
    let scale_out = Matrix3::new(1.0 / r, 0.0, 0.0, 0.0, 1.0 / r, 0.0, 0.0, 0.0, 1.0);
    let hn = scale_out * init.matrix() * scale_in;
    let hn = hn / hn[(2, 2)];
    let mut x0 = vec![0.0; 13];
    for k in 0..8 {
        x0[k] = hn[(k / 3, k % 3)];
    }
    let sn: Vec<Point> = pairs.iter().map(|(s, _)| Point::new(s.x / sd, s.y / sd)).collect();
    let pn: Vec<Point> = pairs.iter().map(|(_, p)| Point::new(p.x / r, p.y / r)).collect();
    let residuals = |x: &[f64]| -> Option<Vec<f64>> {
        let d = DistortionParams::from_slice(&x[8..13]);
        let mut out = Vec::with_capacity(2 * sn.len());
        for (s, p) in sn.iter().zip(&pn) {
            let w = x[6] * s.x + x[7] * s.y + 1.0;
            if w.abs() < 1e-12 {
                return None;
            }
            let g = Point::new((x[0] * s.x + x[1] * s.y + x[2]) / w, (x[3] * s.x + x[4] * s.y + x[5]) / w);
            let q = apply_distortion(g, &d);
            out.push(q.x - p.x);
            out.push(q.y - p.y);
        }
        Some(out)
    };
    let opts = LmOptions { max_iter: 400, ..LmOptions::default() };
    let res = minimize(residuals, &x0, opts).ok_or_else(|| Error::Fit("initial guess outside model domain".into()))?;
    let rms = (res.cost / (2 * pairs.len()) as f64).sqrt() * r;
    if !res.converged || !rms.is_finite() {
        return Err(Error::Convergence(format!(
            "distortion fit diverged; residual RMS trace {:?}",
            res.trace.iter().map(|c| (c / (2 * pairs.len()) as f64).sqrt() * r).collect::<Vec<_>>()
        )));
    }
    let x = &res.x;
    let hn = Matrix3::new(x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], 1.0);
    let unscale_out = Matrix3::new(r, 0.0, 0.0, 0.0, r, 0.0, 0.0, 0.0, 1.0);
    let unscale_in = Matrix3::new(1.0 / sd, 0.0, 0.0, 0.0, 1.0 / sd, 0.0, 0.0, 0.0, 1.0);
    let homography = Homography::from_matrix(unscale_out * hn * unscale_in)?;
    let distortion = DistortionParams::from_slice(&x[8..13]);
    Ok(DistortionFit {
        geometry: CameraGeometry::new(homography, distortion, sensor_width, sensor_height),
        rms,
        trace: res.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn truth(d: DistortionParams) -> CameraGeometry {
        let h = Homography::from_rows([[4.0, 0.08, 10.0], [-0.05, 4.1, -6.0], [2e-5, -1e-5, 1.0]]).unwrap();
        CameraGeometry::new(h, d, 1400, 1000)
    }

    fn lattice(geo: &CameraGeometry) -> Vec<(Point, Point)> {
        let mut v = Vec::new();
        for i in -8..=8 {
            for j in -5..=5 {
                let s = Point::new(i as f64 * 20.0, j as f64 * 20.0);
                v.push((s, geo.display_to_raw(s)));
            }
        }
        v
    }

    #[test]
    fn recovers_noiseless() {
        let d = DistortionParams { k1: 0.05, k2: -0.01, k3: 0.004, p1: 8e-4, p2: -5e-4 };
        let geo = truth(d);
        let fit = fit_distortion(&lattice(&geo), 1400, 1000).unwrap();
        assert!(fit.rms <= 1e-6, "rms {}", fit.rms);
        let got = fit.geometry.distortion.to_array();
        for (a, b) in got.iter().zip(d.to_array()) {
            assert!((a - b).abs() < 1e-5, "{got:?}");
        }
    }

    #[test]
    fn zero_distortion_stays_zero() {
        let geo = truth(DistortionParams::default());
        let fit = fit_distortion(&lattice(&geo), 1400, 1000).unwrap();
        assert!(fit.geometry.distortion.to_array().iter().all(|c| c.abs() <= 1e-8), "{:?}", fit.geometry.distortion);
    }

    #[test]
    fn noisy_rms_near_noise_level() {
        let geo = truth(DistortionParams { k1: 0.05, ..Default::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 0.05).unwrap();
        let pairs: Vec<_> = lattice(&geo)
            .into_iter()
            .map(|(s, p)| (s, Point::new(p.x + n.sample(&mut rng), p.y + n.sample(&mut rng))))
            .collect();
        let fit = fit_distortion(&pairs, 1400, 1000).unwrap();
        // 374 residuals, 13 parameters: expected RMS = 0.05 * sqrt(1 - 13/374)
        assert!(fit.rms > 0.04 && fit.rms < 0.06, "rms {}", fit.rms);
    }

    #[test]
    fn too_few_points() {
        let geo = truth(DistortionParams::default());
        assert!(fit_distortion(&lattice(&geo)[..20], 1400, 1000).is_err());
    }
}
