//! Camera RGB to CIE XYZ: fitting, application with covariance propagation,
//! and colour-difference evaluation.

mod de2000;

pub use de2000::{delta_e2000, xyz_to_lab, D65_WHITE};

use nalgebra::{DMatrix, Matrix3, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, UncertainImage};

pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix6x3 = SMatrix<f64, 6, 3>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcmMode {
    Linear,
    Rootpoly,
}

/// Either a 3x3 matrix on `[r, g, b]` or a 3x6 matrix on the root-polynomial
/// expansion `[r, g, b, sqrt(rg), sqrt(rb), sqrt(gb)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CcmRecord", into = "CcmRecord")]
pub enum ColorCorrection {
    Linear(Matrix3<f64>),
    Rootpoly(Matrix3x6),
}

#[derive(Serialize, Deserialize)]
struct CcmRecord {
    mode: CcmMode,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<CcmRecord> for ColorCorrection {
    type Error = Error;
    fn try_from(r: CcmRecord) -> Result<Self> {
        let cols = match r.mode {
            CcmMode::Linear => 3,
            CcmMode::Rootpoly => 6,
        };
        if r.rows.len() != 3 || r.rows.iter().any(|row| row.len() != cols) {
            return Err(Error::Config(format!("colour matrix must be 3x{cols}")));
        }
        let flat: Vec<f64> = r.rows.iter().flatten().copied().collect();
        let cc = match r.mode {
            CcmMode::Linear => ColorCorrection::Linear(Matrix3::from_row_slice(&flat)),
            CcmMode::Rootpoly => ColorCorrection::Rootpoly(Matrix3x6::from_row_slice(&flat)),
        };
        cc.validate()?;
        Ok(cc)
    }
}

impl From<ColorCorrection> for CcmRecord {
    fn from(c: ColorCorrection) -> Self {
        match c {
            ColorCorrection::Linear(m) => CcmRecord {
                mode: CcmMode::Linear,
                rows: (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect(),
            },
            ColorCorrection::Rootpoly(m) => CcmRecord {
                mode: CcmMode::Rootpoly,
                rows: (0..3).map(|i| (0..6).map(|j| m[(i, j)]).collect()).collect(),
            },
        }
    }
}

impl ColorCorrection {
    pub fn mode(&self) -> CcmMode {
        match self {
            ColorCorrection::Linear(_) => CcmMode::Linear,
            ColorCorrection::Rootpoly(_) => CcmMode::Rootpoly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ColorCorrection::Linear(m) => {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite colour matrix".into()));
                }
                if m.determinant().abs() <= 1e-12 * m.norm().powi(3) {
                    return Err(Error::Rank("colour matrix is singular".into()));
                }
            }
            ColorCorrection::Rootpoly(m) => {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite colour matrix".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean transform of one pixel.
    pub fn apply_rgb(&self, rgb: [f64; 3]) -> [f64; 3] {
        let y = match self {
            ColorCorrection::Linear(m) => m * nalgebra::Vector3::from(rgb),
            ColorCorrection::Rootpoly(m) => m * nalgebra::Vector6::from(rootpoly_features(rgb)),
        };
        [y.x, y.y, y.z]
    }
}

/// `[r, g, b, sqrt(rg), sqrt(rb), sqrt(gb)]`.
pub fn rootpoly_features(l: [f64; 3]) -> [f64; 6] {
    let [r, g, b] = l;
    [r, g, b, (r * g).sqrt(), (r * b).sqrt(), (g * b).sqrt()]
}

/// Jacobian of [`rootpoly_features`], with every channel floored at
/// `max(l, 1e-6 * max(l))` so black pixels stay finite.
pub fn rootpoly_jacobian(l: [f64; 3]) -> Matrix6x3 {
    let top = l.iter().copied().fold(0.0, f64::max);
    let floor = if top > 0.0 { 1e-6 * top } else { 1e-300 };
    let [r, g, b] = l.map(|v| v.max(floor));
    let d = |num: f64, den: f64| 0.5 * (num / den).sqrt();
    Matrix6x3::new(
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0, //
        d(g, r), d(r, g), 0.0, //
        d(b, r), 0.0, d(r, b), //
        0.0, d(b, g), d(g, b),
    )
}

/// One colour patch: camera response and reference tristimulus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchMeasurement {
    pub camera_rgb: [f64; 3],
    pub reference_xyz: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct CcmFit {
    pub correction: ColorCorrection,
    /// CIEDE2000 per patch, D65 white at luminance `white_y`.
    pub delta_e: Vec<f64>,
    pub mean_delta_e: f64,
    pub white_y: f64,
}

/// Equal-weight least squares on XYZ residuals. `white_y` defaults to the
/// largest reference luminance among the patches.
pub fn fit_ccm(patches: &[PatchMeasurement], mode: CcmMode, white_y: Option<f64>) -> Result<CcmFit> {
    let k = match mode {
        CcmMode::Linear => 3,
        CcmMode::Rootpoly => 6,
    };
    if patches.len() < k {
        return Err(Error::Rank(format!("{} patches cannot determine a 3x{k} matrix", patches.len())));
    }
    for (i, p) in patches.iter().enumerate() {
        if p.reference_xyz[1] < 0.0 || p.camera_rgb.iter().chain(&p.reference_xyz).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("patch {i} has invalid values")));
        }
        if mode == CcmMode::Rootpoly && p.camera_rgb.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain(format!("patch {i} has negative camera values")));
        }
    }
    let features: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| match mode {
            CcmMode::Linear => p.camera_rgb.to_vec(),
            CcmMode::Rootpoly => rootpoly_features(p.camera_rgb).to_vec(),
        })
        .collect();
    let dependent = dependent_rows(&features);
    let n = patches.len();
    let f = DMatrix::from_fn(n, k, |i, j| features[i][j]);
    let y = DMatrix::from_fn(n, 3, |i, j| patches[i].reference_xyz[j]);
    let svd = f.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < k {
        return Err(Error::Rank(format!(
            "design matrix has rank {rank} < {k}; linearly dependent patches: {dependent:?}"
        )));
    }
    let sol = svd.solve(&y, 1e-10 * smax).map_err(|e| Error::Fit(e.to_string()))?;
    let correction = match mode {
        CcmMode::Linear => ColorCorrection::Linear(Matrix3::from_fn(|i, j| sol[(j, i)])),
        CcmMode::Rootpoly => ColorCorrection::Rootpoly(Matrix3x6::from_fn(|i, j| sol[(j, i)])),
    };
    correction.validate()?;
    let white_y = white_y.unwrap_or_else(|| patches.iter().map(|p| p.reference_xyz[1]).fold(0.0, f64::max));
    if !(white_y > 0.0) {
        return Err(Error::Domain("white luminance must be > 0".into()));
    }
    let delta_e: Vec<f64> = patches
        .iter()
        .map(|p| {
            let est = correction.apply_rgb(p.camera_rgb);
            delta_e2000(xyz_to_lab(est, white_y), xyz_to_lab(p.reference_xyz, white_y))
        })
        .collect();
    let mean_delta_e = delta_e.iter().sum::<f64>() / n as f64;
    Ok(CcmFit { correction, delta_e, mean_delta_e, white_y })
}

/// Indices of rows that are linear combinations of earlier rows.
fn dependent_rows(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dep = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let mut v = r.clone();
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 * scale.max(1e-300) {
            dep.push(i);
        } else {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    dep
}

/// Applies the correction to an RGB image; the result carries a full 3x3
/// covariance per pixel (`M S M^T`, or `M J S J^T M^T` for root-polynomial).
pub fn apply_ccm(img: &UncertainImage, cc: &ColorCorrection) -> Result<UncertainImage> {
    if img.channels() != 3 {
        return Err(Error::Dimension("colour correction needs 3 channels".into()));
    }
    cc.validate()?;
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if let ColorCorrection::Rootpoly(_) = cc {
        for c in 0..3 {
            if let Some(i) = img.mean()[c].data().iter().position(|&v| v < 0.0) {
                return Err(Error::Domain(format!(
                    "root-polynomial correction needs non-negative means; pixel (row {}, col {}) channel {c}",
                    i / w,
                    i % w
                )));
            }
        }
    }
    let per_pixel: Vec<([f64; 3], [f64; 9])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let l = [img.mean()[0].data()[i], img.mean()[1].data()[i], img.mean()[2].data()[i]];
            let s = Matrix3::from(img.covariance_at(i)).transpose();
            let (mu, a) = match cc {
                ColorCorrection::Linear(m) => (cc.apply_rgb(l), *m),
                ColorCorrection::Rootpoly(m) => (cc.apply_rgb(l), m * rootpoly_jacobian(l)),
            };
            let sy = a * s * a.transpose();
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[r * 3 + c] = 0.5 * (sy[(r, c)] + sy[(c, r)]);
                }
                out[r * 3 + r] = out[r * 3 + r].max(0.0);
            }
            (mu, out)
        })
        .collect();
    let means = (0..3)
        .map(|c| ImagePlane::new(w, h, per_pixel.iter().map(|p| p.0[c]).collect()))
        .collect::<Result<Vec<_>>>()?;
    let cov = (0..9)
        .map(|k| ImagePlane::new(w, h, per_pixel.iter().map(|p| p.1[k]).collect()))
        .collect::<Result<Vec<_>>>()?;
    UncertainImage::covariance(means, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn pixel(mean: [f64; 3], var: [f64; 3]) -> UncertainImage {
        UncertainImage::diagonal(
            mean.iter().map(|&m| ImagePlane::filled(1, 1, m)).collect(),
            var.iter().map(|&v| ImagePlane::filled(1, 1, v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_diagonal_propagation() {
        let out = apply_ccm(&pixel([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]), &ColorCorrection::Linear(Matrix3::identity())).unwrap();
        assert_eq!(out.covariance_at(0), [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]]);
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(2.0, 1.0, 1.0));
        let out = apply_ccm(&pixel([1.0; 3], [1.0; 3]), &ColorCorrection::Linear(m)).unwrap();
        assert_eq!(out.covariance_at(0), [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn rootpoly_jacobian_entries() {
        let j = rootpoly_jacobian([4.0, 1.0, 1.0]);
        assert!((j[(3, 0)] - 0.25).abs() < 1e-15);
        let l = [4.0, 1.0, 1.0];
        let h = 1e-6;
        for c in 0..3 {
            let mut lp = l;
            let mut lm = l;
            lp[c] += h;
            lm[c] -= h;
            let (fp, fm) = (rootpoly_features(lp), rootpoly_features(lm));
            for r in 0..6 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                let an = j[(r, c)];
                let rel = (fd - an).abs() / an.abs().max(1e-12);
                assert!(if an == 0.0 { fd.abs() < 1e-9 } else { rel <= 1e-5 }, "J[{r}][{c}] {an} vs {fd}");
            }
        }
    }

    #[test]
    fn jacobian_floor_keeps_black_finite() {
        let j = rootpoly_jacobian([0.0, 0.0, 0.0]);
        assert!(j.iter().all(|v| v.is_finite()));
        let j = rootpoly_jacobian([1.0, 0.0, 0.5]);
        assert!(j.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn xyz_patches_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Uniform::new(0.0, 100.0).unwrap();
        let patches: Vec<_> = (0..30)
            .map(|_| {
                let x = [u.sample(&mut rng), u.sample(&mut rng), u.sample(&mut rng)];
                PatchMeasurement { camera_rgb: x, reference_xyz: x }
            })
            .collect();
        let fit = fit_ccm(&patches, CcmMode::Linear, None).unwrap();
        let ColorCorrection::Linear(m) = fit.correction else { panic!() };
        assert!((m - Matrix3::identity()).amax() <= 1e-8);
        assert!(fit.mean_delta_e < 1e-6);
    }

    #[test]
    fn underdetermined_and_dependent() {
        let p = |v: [f64; 3]| PatchMeasurement { camera_rgb: v, reference_xyz: v };
        assert!(fit_ccm(&[p([1.0, 0.0, 0.0]), p([0.0, 1.0, 0.0])], CcmMode::Linear, None).is_err());
        let err = fit_ccm(&[p([1.0, 0.0, 0.0]), p([0.0, 1.0, 0.0]), p([1.0, 1.0, 0.0]), p([2.0, 0.0, 0.0])], CcmMode::Linear, None)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn serde_round_trip() {
        let cc = ColorCorrection::Rootpoly(Matrix3x6::from_fn(|i, j| (i * 6 + j) as f64 * 0.1));
        #[derive(Serialize, Deserialize)]
        struct W {
            cc: ColorCorrection,
        }
        let s = toml::to_string(&W { cc: cc.clone() }).unwrap();
        let back: W = toml::from_str(&s).unwrap();
        assert_eq!(back.cc, cc);
    }
}
