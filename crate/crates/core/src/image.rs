//! Image containers with uncertainty and the centered coordinate convention.
//!
//! Every plane is stored row-major from the top-left corner. Geometric code
//! works in centered coordinates instead: origin at the image center, x to the
//! right, y up, one unit per pixel. [`coord_to_storage`] and
//! [`storage_to_coord`] are the only bridge between the two.

use nalgebra::{Matrix3, Point2, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

/// Per-pixel flags, `true` marks an invalid sample.
pub type Mask = Vec<bool>;

/// A single grid of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty plane {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "plane {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at index {i}")));
        }
        Ok(ImagePlane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty plane");
        ImagePlane { width, height, data: vec![value; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a plane by evaluating `f(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        ImagePlane { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_dims(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImagePlane {
        ImagePlane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// How per-pixel uncertainty is represented.
#[derive(Clone, Debug, PartialEq)]
pub enum Uncertainty {
    /// One variance plane per channel; channels independent.
    Diagonal(Vec<ImagePlane>),
    /// Nine planes holding the row-major 3x3 covariance of every pixel.
    Covariance(Vec<ImagePlane>),
}

/// Mean planes plus their uncertainty; the value passed between stages.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainImage {
    mean: Vec<ImagePlane>,
    uncertainty: Uncertainty,
}

fn check_same_dims(planes: &[ImagePlane], w: usize, h: usize) -> Result<()> {
    for p in planes {
        if p.width != w || p.height != h {
            return Err(Error::Dimension(format!(
                "plane {}x{} does not match {w}x{h}",
                p.width, p.height
            )));
        }
    }
    Ok(())
}

impl UncertainImage {
    pub fn diagonal(mean: Vec<ImagePlane>, variance: Vec<ImagePlane>) -> Result<Self> {
        if mean.is_empty() || !(mean.len() == 1 || mean.len() == 3) {
            return Err(Error::Dimension(format!("{} channels, expected 1 or 3", mean.len())));
        }
        if variance.len() != mean.len() {
            return Err(Error::Dimension(format!(
                "{} mean planes but {} variance planes",
                mean.len(),
                variance.len()
            )));
        }
        let (w, h) = (mean[0].width, mean[0].height);
        check_same_dims(&mean, w, h)?;
        check_same_dims(&variance, w, h)?;
        for (c, v) in variance.iter().enumerate() {
            if let Some(i) = v.data.iter().position(|&x| x < 0.0) {
                return Err(Error::Domain(format!("negative variance in channel {c} at index {i}")));
            }
        }
        Ok(UncertainImage { mean, uncertainty: Uncertainty::Diagonal(variance) })
    }

    pub fn covariance(mean: Vec<ImagePlane>, cov: Vec<ImagePlane>) -> Result<Self> {
        if mean.len() != 3 || cov.len() != 9 {
            return Err(Error::Dimension(format!(
                "covariance mode needs 3 mean and 9 covariance planes, got {} and {}",
                mean.len(),
                cov.len()
            )));
        }
        let (w, h) = (mean[0].width, mean[0].height);
        check_same_dims(&mean, w, h)?;
        check_same_dims(&cov, w, h)?;
        for i in 0..w * h {
            for a in 0..3 {
                if cov[a * 3 + a].data[i] < 0.0 {
                    return Err(Error::Domain(format!("negative variance on diagonal at index {i}")));
                }
                for b in (a + 1)..3 {
                    if cov[a * 3 + b].data[i] != cov[b * 3 + a].data[i] {
                        return Err(Error::Domain(format!("asymmetric covariance at index {i}")));
                    }
                }
            }
        }
        Ok(UncertainImage { mean, uncertainty: Uncertainty::Covariance(cov) })
    }

    /// Noise-free image: zero variance everywhere.
    pub fn exact(mean: Vec<ImagePlane>) -> Result<Self> {
        let var = mean.iter().map(|p| ImagePlane::zeros(p.width, p.height)).collect();
        Self::diagonal(mean, var)
    }

    pub fn width(&self) -> usize {
        self.mean[0].width
    }

    pub fn height(&self) -> usize {
        self.mean[0].height
    }

    pub fn pixels(&self) -> usize {
        self.width() * self.height()
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[ImagePlane] {
        &self.mean
    }

    pub fn uncertainty(&self) -> &Uncertainty {
        &self.uncertainty
    }

    pub fn is_covariance(&self) -> bool {
        matches!(self.uncertainty, Uncertainty::Covariance(_))
    }

    pub fn into_parts(self) -> (Vec<ImagePlane>, Uncertainty) {
        (self.mean, self.uncertainty)
    }

    /// Variance plane of channel `c`, in either mode.
    pub fn variance(&self, c: usize) -> &ImagePlane {
        match &self.uncertainty {
            Uncertainty::Diagonal(v) => &v[c],
            Uncertainty::Covariance(cov) => &cov[c * 3 + c],
        }
    }

    /// Full 3x3 covariance at a storage index (diagonal mode fills zeros).
    pub fn covariance_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        match &self.uncertainty {
            Uncertainty::Diagonal(v) => {
                for (c, p) in v.iter().enumerate() {
                    m[c][c] = p.data[idx];
                }
            }
            Uncertainty::Covariance(cov) => {
                for a in 0..3 {
                    for b in 0..3 {
                        m[a][b] = cov[a * 3 + b].data[idx];
                    }
                }
            }
        }
        m
    }

    /// Per-channel standard deviation planes.
    pub fn sigma(&self) -> Vec<ImagePlane> {
        (0..self.channels()).map(|c| self.variance(c).map(f64::sqrt)).collect()
    }
}

/// Per-pixel factors `A` with `A A^T` equal to the pixel covariance (only
/// the leading `channels x channels` block is used).
pub fn covariance_factors(img: &UncertainImage) -> Result<Vec<[[f64; 3]; 3]>> {
    let (w, nc) = (img.width(), img.channels());
    (0..img.pixels())
        .into_par_iter()
        .map(|i| {
            let cov = img.covariance_at(i);
            let bad = || Error::NonPsd { row: i / w, col: i % w };
            if let Uncertainty::Diagonal(_) = img.uncertainty() {
                return Ok(std::array::from_fn(|a| std::array::from_fn(|b| if a == b && a < nc { cov[a][a].sqrt() } else { 0.0 })));
            }
            let m = Matrix3::from_fn(|a, b| cov[a][b]);
            if !m.iter().all(|v| v.is_finite()) {
                return Err(bad());
            }
            let e = SymmetricEigen::new(m);
            if e.eigenvalues.min() < -1e-10 * e.eigenvalues.amax() {
                return Err(bad());
            }
            let s = e.eigenvectors * Matrix3::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
            Ok(std::array::from_fn(|a| std::array::from_fn(|b| s[(a, b)])))
        })
        .collect()
}

/// One draw from the per-pixel normal of `img` (independent across pixels),
/// using ChaCha stream `stream` of `seed`.
pub fn draw_gaussian(img: &UncertainImage, factors: &[[[f64; 3]; 3]], seed: u64, stream: u64) -> Vec<ImagePlane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let nc = img.channels();
    let mu = img.mean();
    let mut planes: Vec<ImagePlane> = mu.to_vec();
    for (i, a) in factors.iter().enumerate() {
        let mut z = [0.0; 3];
        for v in z.iter_mut().take(nc) {
            *v = StandardNormal.sample(&mut rng);
        }
        for (k, p) in planes.iter_mut().enumerate() {
            p.data[i] += a[k][0] * z[0] + a[k][1] * z[1] + a[k][2] * z[2];
        }
    }
    planes
}

/// The three planar frames the pipeline moves between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordFrame {
    /// Display pixels, `s`.
    Display,
    /// Undistorted camera plane, `g`.
    Undistorted,
    /// Raw sensor pixels, `p`.
    Raw,
}

/// Continuous storage position (row, col) of a centered coordinate.
#[inline]
pub fn to_storage_f(p: Point, width: usize, height: usize) -> (f64, f64) {
    let col = p.x + (width as f64 - 1.0) * 0.5;
    let row = (height as f64 - 1.0) * 0.5 - p.y;
    (row, col)
}

/// Centered coordinate of the pixel center at (row, col).
#[inline]
pub fn storage_to_coord(row: usize, col: usize, width: usize, height: usize) -> Point {
    Point::new(
        col as f64 - (width as f64 - 1.0) * 0.5,
        (height as f64 - 1.0) * 0.5 - row as f64,
    )
}

/// Nearest storage index of a centered coordinate.
///
/// Ties round half-up along x and half-down along the flipped y axis, so a
/// point exactly between two rows lands on the upper one.
pub fn coord_to_storage(p: Point, width: usize, height: usize) -> Result<(usize, usize)> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(Error::Range(format!("non-finite coordinate ({}, {})", p.x, p.y)));
    }
    let (row_f, col_f) = to_storage_f(p, width, height);
    let col = (col_f + 0.5).floor();
    let row = (row_f - 0.5).ceil();
    if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
        return Err(Error::Range(format!(
            "coordinate ({}, {}) outside {width}x{height}",
            p.x, p.y
        )));
    }
    Ok((row as usize, col as usize))
}
