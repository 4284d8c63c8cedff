//! Flat-field vignetting: estimation and exact mean/variance correction.

use crate::error::{Error, Result};
use crate::image::{ImagePlane, UncertainImage, Uncertainty};

/// Relative illumination per channel, peak 1.
#[derive(Clone, Debug, PartialEq)]
pub struct VignettingMap {
    planes: Vec<ImagePlane>,
}

impl VignettingMap {
    pub fn new(planes: Vec<ImagePlane>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Dimension("vignetting map has no channels".into()));
        }
        for (c, p) in planes.iter().enumerate() {
            if !p.same_dims(&planes[0]) {
                return Err(Error::Dimension("vignetting channels differ in size".into()));
            }
            if p.data().iter().any(|&v| !(v > 0.0 && v <= 1.0 + 1e-12)) {
                return Err(Error::Domain(format!("vignetting channel {c} has values outside (0, 1]")));
            }
        }
        Ok(VignettingMap { planes })
    }

    pub fn planes(&self) -> &[ImagePlane] {
        &self.planes
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    fn plane(&self, c: usize) -> &ImagePlane {
        &self.planes[c.min(self.planes.len() - 1)]
    }
}

/// `V = L / max(L)` per channel, after averaging the given flat captures.
pub fn estimate_vignette(flats: &[UncertainImage]) -> Result<VignettingMap> {
    let first = flats.first().ok_or_else(|| Error::Domain("no flat-field captures".into()))?;
    let (w, h, nc) = (first.width(), first.height(), first.channels());
    if flats.iter().any(|f| f.width() != w || f.height() != h || f.channels() != nc) {
        return Err(Error::Dimension("flat-field captures differ in shape".into()));
    }
    let mut planes = Vec::with_capacity(nc);
    for c in 0..nc {
        let mut acc = vec![0.0; w * h];
        for f in flats {
            for (a, v) in acc.iter_mut().zip(f.mean()[c].data()) {
                *a += v;
            }
        }
        let n = flats.len() as f64;
        let avg: Vec<f64> = acc.iter().map(|a| a / n).collect();
        let peak = avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Domain(format!("flat field channel {c} has non-positive maximum")));
        }
        planes.push(ImagePlane::new(w, h, avg.iter().map(|v| v / peak).collect())?);
    }
    VignettingMap::new(planes)
}

/// Divides the mean by `V` and the (co)variance by the matching products of `V`.
/// A single-channel map applies to every channel.
pub fn correct_vignette(img: &UncertainImage, v: &VignettingMap) -> Result<UncertainImage> {
    if v.plane(0).width() != img.width() || v.plane(0).height() != img.height() {
        return Err(Error::Dimension("vignetting map does not match image".into()));
    }
    if v.channels() != 1 && v.channels() != img.channels() {
        return Err(Error::Dimension("vignetting map channel count does not match".into()));
    }
    for p in &v.planes {
        if p.data().iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain("vignetting map must be > 0".into()));
        }
    }
    let div = |a: &ImagePlane, b: &ImagePlane, c: &ImagePlane| -> ImagePlane {
        let mut out = a.clone();
        for ((o, x), y) in out.data_mut().iter_mut().zip(b.data()).zip(c.data()) {
            *o /= x * y;
        }
        out
    };
    let means = img
        .mean()
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let mut out = m.clone();
            for (o, x) in out.data_mut().iter_mut().zip(v.plane(c).data()) {
                *o /= x;
            }
            out
        })
        .collect();
    match img.uncertainty() {
        Uncertainty::Diagonal(vars) => {
            let vars = vars.iter().enumerate().map(|(c, p)| div(p, v.plane(c), v.plane(c))).collect();
            UncertainImage::diagonal(means, vars)
        }
        Uncertainty::Covariance(cov) => {
            let cov = cov.iter().enumerate().map(|(k, p)| div(p, v.plane(k / 3), v.plane(k % 3))).collect();
            UncertainImage::covariance(means, cov)
        }
    }
}
