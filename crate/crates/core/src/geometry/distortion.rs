use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Point;

/// Brown–Conrady radial (k1..k3) and tangential (p1, p2) coefficients, acting
/// on coordinates normalised by the sensor half-diagonal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl DistortionParams {
    pub fn to_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        DistortionParams { k1: v[0], k2: v[1], k3: v[2], p1: v[3], p2: v[4] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite distortion coefficient".into()));
        }
        Ok(())
    }

    /// Jacobian of the forward map at `g`.
    pub fn jacobian(&self, g: Point) -> Matrix2<f64> {
        let (x, y) = (g.x, g.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dradial = self.k1 + 2.0 * self.k2 * r2 + 3.0 * self.k3 * r2 * r2;
        let (p1, p2) = (self.p1, self.p2);
        Matrix2::new(
            radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }

    /// True when the Jacobian determinant stays positive on a 33x33 grid over
    /// `[-ex, ex] x [-ey, ey]`, i.e. the map does not fold over the field.
    pub fn is_injective_on(&self, ex: f64, ey: f64) -> bool {
        (0..33).all(|i| {
            (0..33).all(|j| {
                let g = Point::new(ex * (i as f64 / 16.0 - 1.0), ey * (j as f64 / 16.0 - 1.0));
                self.jacobian(g).determinant() > 0.0
            })
        })
    }
}

/// Forward lens map `g -> p` in normalised coordinates.
pub fn apply_distortion(g: Point, d: &DistortionParams) -> Point {
    let (x, y) = (g.x, g.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    Point::new(
        x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
        y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y,
    )
}

/// Newton inversion of [`apply_distortion`], at most 50 iterations.
pub fn invert_distortion(p: Point, d: &DistortionParams) -> Result<Point> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(Error::Domain("non-finite point".into()));
    }
    let mut g = p;
    let mut err = f64::INFINITY;
    for _ in 0..50 {
        let r = apply_distortion(g, d) - p;
        err = r.norm();
        if err < 1e-14 * (1.0 + p.coords.norm()) {
            return Ok(g);
        }
        let Some(inv) = d.jacobian(g).try_inverse() else { break };
        g -= inv * r;
    }
    if err < 1e-10 {
        Ok(g)
    } else {
        Err(Error::Convergence(format!("distortion inversion stalled at residual {err:.3e} for ({}, {})", p.x, p.y)))
    }
}
