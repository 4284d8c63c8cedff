use std::io::Read;

use nalgebra::Matrix3;

use crate::error::{Error, Result};

const CIE_1931: &str = include_str!("../../data/cie1931_2deg.csv");
const CAMERA_RGB: &str = include_str!("../../data/camera_rgb.csv");
const DISPLAY_PRIMARIES: &str = include_str!("../../data/display_primaries.csv");

/// Three curves sampled on a wavelength grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub wavelengths: Vec<f64>,
    pub values: [Vec<f64>; 3],
}

/// Reads `wavelength,a,b,c` CSV with a header row. Wavelengths must be
/// strictly increasing and values finite and non-negative.
pub fn read_curves<R: Read>(src: R) -> Result<Curves> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(src);
    let mut wl = Vec::new();
    let mut vals: [Vec<f64>; 3] = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("spectra line {}: {e}", i + 2)))?;
        if rec.len() != 4 {
            return Err(Error::Format(format!("spectra line {}: expected 4 fields, got {}", i + 2, rec.len())));
        }
        let mut row = [0.0f64; 4];
        for (j, f) in rec.iter().enumerate() {
            row[j] = f.parse().map_err(|_| Error::Format(format!("spectra line {}: bad number {f:?}", i + 2)))?;
            if !row[j].is_finite() {
                return Err(Error::Format(format!("spectra line {}: non-finite value", i + 2)));
            }
        }
        if row[1..].iter().any(|&v| v < 0.0) {
            return Err(Error::Domain(format!("spectra line {}: negative value", i + 2)));
        }
        if wl.last().is_some_and(|&l| row[0] <= l) {
            return Err(Error::Format(format!("spectra line {}: wavelengths must increase", i + 2)));
        }
        wl.push(row[0]);
        for c in 0..3 {
            vals[c].push(row[c + 1]);
        }
    }
    if wl.len() < 2 {
        return Err(Error::Format("spectra need at least two samples".into()));
    }
    Ok(Curves { wavelengths: wl, values: vals })
}

/// Display primaries, camera sensitivities and observer colour matching
/// functions on one wavelength grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralModel {
    pub primaries: Curves,
    pub camera: Curves,
    pub cmf: Curves,
}

/// Per-primary integrals, and the matrix taking camera RGB to XYZ.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBases {
    /// Column `k`: camera response to primary `k` at unit drive.
    pub camera: Matrix3<f64>,
    /// Column `k`: XYZ of primary `k` at unit drive.
    pub xyz: Matrix3<f64>,
    /// `xyz * camera^-1`.
    pub m: Matrix3<f64>,
}

impl SpectralModel {
    pub fn new(primaries: Curves, camera: Curves, cmf: Curves) -> Result<Self> {
        if primaries.wavelengths != camera.wavelengths || primaries.wavelengths != cmf.wavelengths {
            return Err(Error::Domain("spectral curves must share a wavelength grid".into()));
        }
        Ok(SpectralModel { primaries, camera, cmf })
    }

    /// Three Gaussian primaries (610/545/465 nm, 20 nm), smooth camera
    /// curves and the CIE 1931 2-degree observer, with primaries scaled so
    /// that full white has luminance 1.
    pub fn reference() -> Self {
        let cmf = read_curves(CIE_1931.as_bytes()).expect("bundled CMF table");
        let camera = read_curves(CAMERA_RGB.as_bytes()).expect("bundled camera table");
        let primaries = read_curves(DISPLAY_PRIMARIES.as_bytes()).expect("bundled primaries table");
        let mut sm = SpectralModel::new(primaries, camera, cmf).expect("bundled tables share a grid");
        // balance to a white near D65 (x 0.3127, y 0.329), luminance 1
        let b = sm.raw_integrals(&sm.cmf);
        let target = nalgebra::Vector3::new(0.3127 / 0.329, 1.0, (1.0 - 0.3127 - 0.329) / 0.329);
        let w = b.lu().solve(&target).expect("primaries are independent");
        for k in 0..3 {
            for v in &mut sm.primaries.values[k] {
                *v *= w[k];
            }
        }
        sm
    }

    /// Trapezoidal `int E_k C_c dl` for every pair, as a matrix `[c][k]`.
    fn raw_integrals(&self, sens: &Curves) -> Matrix3<f64> {
        let wl = &self.primaries.wavelengths;
        Matrix3::from_fn(|c, k| {
            let f = |i: usize| self.primaries.values[k][i] * sens.values[c][i];
            (1..wl.len()).map(|i| 0.5 * (f(i) + f(i - 1)) * (wl[i] - wl[i - 1])).sum()
        })
    }

    pub fn bases(&self) -> Result<SpectralBases> {
        let camera = self.raw_integrals(&self.camera);
        let xyz = self.raw_integrals(&self.cmf);
        let scale = camera.amax();
        if !(scale > 0.0) || camera.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(Error::Rank("camera responses to the primaries are linearly dependent".into()));
        }
        let inv = camera.try_inverse().ok_or_else(|| Error::Rank("singular camera basis".into()))?;
        Ok(SpectralBases { camera, xyz, m: xyz * inv })
    }
}

/// Camera RGB, XYZ and the exact colour matrix for one subpixel drive `p`.
pub fn integrate_spectra(sm: &SpectralModel, p: [f64; 3]) -> Result<([f64; 3], [f64; 3], Matrix3<f64>)> {
    let b = sm.bases()?;
    let v = nalgebra::Vector3::from(p);
    let l = b.camera * v;
    let y = b.xyz * v;
    Ok(([l.x, l.y, l.z], [y.x, y.y, y.z], b.m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observer_camera_gives_identity() {
        let r = SpectralModel::reference();
        let sm = SpectralModel::new(r.primaries.clone(), r.cmf.clone(), r.cmf.clone()).unwrap();
        let (_, _, m) = integrate_spectra(&sm, [1.0, 1.0, 1.0]).unwrap();
        assert!((m - Matrix3::identity()).amax() <= 1e-10);
    }

    #[test]
    fn zero_drive_is_black() {
        let (l, y, _) = integrate_spectra(&SpectralModel::reference(), [0.0; 3]).unwrap();
        assert_eq!(l, [0.0; 3]);
        assert_eq!(y, [0.0; 3]);
    }

    #[test]
    fn reference_white_is_d65_like() {
        let (_, y, _) = integrate_spectra(&SpectralModel::reference(), [1.0; 3]).unwrap();
        assert!((y[1] - 1.0).abs() < 1e-12);
        let s = y[0] + y[1] + y[2];
        assert!((y[0] / s - 0.3127).abs() < 1e-9 && (y[1] / s - 0.329).abs() < 1e-9);
    }

    #[test]
    fn disjoint_narrowband_is_diagonal() {
        // Box primaries that each overlap exactly one box sensitivity.
        let wl: Vec<f64> = (0..30).map(|i| 400.0 + 10.0 * i as f64).collect();
        let band = |lo: f64, hi: f64, a: f64| wl.iter().map(|&l| if l >= lo && l <= hi { a } else { 0.0 }).collect::<Vec<_>>();
        let prim = Curves { wavelengths: wl.clone(), values: [band(600.0, 640.0, 1.0), band(500.0, 540.0, 1.0), band(420.0, 460.0, 1.0)] };
        let cam = Curves { wavelengths: wl.clone(), values: [band(600.0, 640.0, 2.0), band(500.0, 540.0, 3.0), band(420.0, 460.0, 4.0)] };
        let obs = Curves { wavelengths: wl.clone(), values: [band(600.0, 640.0, 1.0), band(500.0, 540.0, 1.0), band(420.0, 460.0, 1.0)] };
        let sm = SpectralModel::new(prim, cam, obs).unwrap();
        let b = sm.bases().unwrap();
        let m = b.m;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(m[(i, j)].abs() < 1e-12);
                }
            }
        }
        assert!((m[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((m[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((m[(2, 2)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn metameric_camera_rejected() {
        let r = SpectralModel::reference();
        let mut cam = r.camera.clone();
        cam.values[1] = cam.values[0].clone();
        let sm = SpectralModel::new(r.primaries, cam, r.cmf).unwrap();
        assert!(matches!(sm.bases(), Err(Error::Rank(_))));
    }

    #[test]
    fn csv_errors() {
        assert!(read_curves("wavelength,a,b,c\n400,1,2\n".as_bytes()).is_err());
        assert!(read_curves("wavelength,a,b,c\n400,1,2,x\n410,1,1,1\n".as_bytes()).is_err());
        assert!(read_curves("wavelength,a,b,c\n410,1,2,3\n400,1,1,1\n".as_bytes()).is_err());
        assert!(read_curves("wavelength,a,b,c\n400,1,-2,3\n410,1,1,1\n".as_bytes()).is_err());
        assert!(read_curves("wavelength,a,b,c\n400,1,2,3\n410,1,1,1\n".as_bytes()).is_ok());
    }
}
