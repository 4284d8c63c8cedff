//! Display-to-sensor geometry: homography, lens distortion, corner refinement
//! and resampling onto the display grid.
//!
//! Three centered frames are involved (x right, y up): display pixels `s`,
//! the undistorted camera plane `g` and raw sensor pixels `p`, with
//! `g = H s` and `p = R u(g / R)` where `u` is the Brown–Conrady model and `R`
//! the sensor half-diagonal.

mod calib;
mod corners;
mod distortion;
mod homography;
mod resample;

pub use calib::{fit_distortion, DistortionFit};
pub use corners::{detect_spots, refine_corners, CornerOptions, RefinedCorner};
pub use distortion::{apply_distortion, invert_distortion, DistortionParams};
pub use homography::{estimate_homography, Homography, HomographyFit};
pub use resample::{resample_to_display, Kernel, Resampled, ResamplingSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Point;

/// The full display-to-raw map `m = u . h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraGeometry {
    pub homography: Homography,
    pub distortion: DistortionParams,
    pub sensor_width: usize,
    pub sensor_height: usize,
}

impl CameraGeometry {
    pub fn new(homography: Homography, distortion: DistortionParams, sensor_width: usize, sensor_height: usize) -> Self {
        CameraGeometry { homography, distortion, sensor_width, sensor_height }
    }

    /// Normalisation radius of the distortion model, raw pixels.
    pub fn norm_radius(&self) -> f64 {
        norm_radius(self.sensor_width, self.sensor_height)
    }

    /// Display point to raw sensor point.
    pub fn display_to_raw(&self, s: Point) -> Point {
        let r = self.norm_radius();
        let g = self.homography.apply(s);
        let p = apply_distortion(Point::new(g.x / r, g.y / r), &self.distortion);
        Point::new(p.x * r, p.y * r)
    }

    /// Raw sensor point to display point.
    pub fn raw_to_display(&self, p: Point) -> Result<Point> {
        let r = self.norm_radius();
        let g = invert_distortion(Point::new(p.x / r, p.y / r), &self.distortion)?;
        self.homography.apply_inverse(Point::new(g.x * r, g.y * r))
    }
}

/// Half-diagonal of a `w x h` sensor.
pub fn norm_radius(w: usize, h: usize) -> f64 {
    0.5 * ((w * w + h * h) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composed_round_trip() {
        let h = Homography::from_rows([[4.1, 0.05, 3.0], [-0.03, 3.9, -2.0], [1e-5, -2e-5, 1.0]]).unwrap();
        let d = DistortionParams { k1: 0.05, k2: -0.01, k3: 0.002, p1: 1e-3, p2: -5e-4 };
        let geo = CameraGeometry::new(h, d, 1200, 800);
        for i in -10..=10 {
            for j in -6..=6 {
                let s = Point::new(i as f64 * 12.0, j as f64 * 11.0);
                let back = geo.raw_to_display(geo.display_to_raw(s)).unwrap();
                assert!((back - s).norm() <= 1e-6, "{s:?} -> {back:?}");
            }
        }
    }
}
