use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Point;

/// Projective map of the plane, stored with `H[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography {
    m: Matrix3<f64>,
    inv: Matrix3<f64>,
}

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Homography::from_rows(rows)
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.rows()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity(), inv: Matrix3::identity() }
    }

    /// Normalises by `H[2][2]`; fails if that entry vanishes or `H` is singular.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite homography".into()));
        }
        let s = m[(2, 2)];
        if s.abs() < 1e-12 * m.norm() {
            return Err(Error::Rank("homography has H[2][2] = 0".into()));
        }
        let m = m / s;
        let det = m.determinant();
        if det.abs() < 1e-14 * m.norm().powi(3) {
            return Err(Error::Rank("singular homography".into()));
        }
        let inv = m.try_inverse().ok_or_else(|| Error::Rank("singular homography".into()))?;
        Ok(Homography { m, inv })
    }

    pub fn from_rows(r: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, s: Point) -> Point {
        project(&self.m, s)
    }

    pub fn apply_inverse(&self, g: Point) -> Result<Point> {
        let p = project(&self.inv, g);
        if p.x.is_finite() && p.y.is_finite() {
            Ok(p)
        } else {
            Err(Error::Range("point maps to infinity".into()))
        }
    }
}

fn project(m: &Matrix3<f64>, s: Point) -> Point {
    let v = m * Vector3::new(s.x, s.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

#[derive(Clone, Debug)]
pub struct HomographyFit {
    pub homography: Homography,
    /// RMS reprojection error per coordinate, in the units of `g`.
    pub rms: f64,
}

/// Similarity that moves points to zero centroid and mean distance sqrt(2).
fn normaliser(pts: &[Point]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let d = pts.iter().map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(d > 0.0) {
        return Err(Error::Rank("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / d;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Hartley-normalised direct linear transform from `s -> g` correspondences.
pub fn estimate_homography(pairs: &[(Point, Point)]) -> Result<HomographyFit> {
    if pairs.len() < 4 {
        return Err(Error::Rank(format!("need at least 4 correspondences, got {}", pairs.len())));
    }
    if pairs.iter().any(|(a, b)| !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite())) {
        return Err(Error::Domain("non-finite correspondence".into()));
    }
    let src: Vec<Point> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point> = pairs.iter().map(|p| p.1).collect();
    let ts = normaliser(&src)?;
    let td = normaliser(&dst)?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, g)) in src.iter().zip(&dst).enumerate() {
        let s = project(&ts, *s);
        let g = project(&td, *g);
        let r0 = [-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, g.x * s.x, g.x * s.y, g.x];
        let r1 = [0.0, 0.0, 0.0, -s.x, -s.y, -1.0, g.y * s.x, g.y * s.y, g.y];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Rank("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, next) = (order[0], order[1]);
    if sv[next] <= 1e-9 * sv[order[8]] {
        return Err(Error::Rank("degenerate configuration: correspondences do not fix a homography".into()));
    }
    let h = vt.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(|| Error::Rank("bad normaliser".into()))?;
    let homography = Homography::from_matrix(td_inv * hn * ts)?;
    let sq: f64 = pairs.iter().map(|(s, g)| (homography.apply(*s) - g).norm_squared()).sum();
    let rms = (sq / (2 * pairs.len()) as f64).sqrt();
    Ok(HomographyFit { homography, rms })
}
