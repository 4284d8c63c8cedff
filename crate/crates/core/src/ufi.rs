//! UFI: a minimal uncertain-float-image container.
//!
//! Layout: one ASCII header line `UFI1 <w> <h> <channels> <diag|cov>\n`
//! followed by little-endian `f32` planes, each stored row-major from the
//! top-left. Plane order is `mean[0..C)` then either `var[0..C)` or, in
//! covariance mode, the nine row-major entries `cov[0..9)`.
//!
//! Values are held as `f64` in memory and narrowed on write, so
//! `read(write(x)) == x` holds for every image whose values are
//! representable as `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Uncertainty, UncertainImage};

const MAGIC: &str = "UFI1";
const MAX_HEADER: usize = 64;

/// Serializes an image to bytes.
pub fn encode(img: &UncertainImage) -> Result<Vec<u8>> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (mode, extra) = match img.uncertainty() {
        Uncertainty::Diagonal(v) => ("diag", v),
        Uncertainty::Covariance(v) => ("cov", v),
    };
    let header = format!("{MAGIC} {w} {h} {c} {mode}\n");
    let planes = img.mean().len() + extra.len();
    let mut out = Vec::with_capacity(header.len() + planes * w * h * 4);
    out.extend_from_slice(header.as_bytes());
    for plane in img.mean().iter().chain(extra.iter()) {
        for &v in plane.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Format(format!("value {v} does not fit in f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<UncertainImage> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(Error::Format("bad magic".into()));
    }
    let mut dim = |name: &str| -> Result<usize> {
        let f = fields.next().ok_or_else(|| Error::Format(format!("missing {name}")))?;
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Format(format!("bad {name} field {f:?}")));
        }
        f.parse().map_err(|_| Error::Format(format!("bad {name} field {f:?}")))
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let c = dim("channels")?;
    let mode = fields.next().ok_or_else(|| Error::Format("missing mode".into()))?;
    if fields.next().is_some() {
        return Err(Error::Format("trailing header fields".into()));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero dimension".into()));
    }
    if c != 1 && c != 3 {
        return Err(Error::Format(format!("{c} channels, expected 1 or 3")));
    }
    let extra = match mode {
        "diag" => c,
        "cov" if c == 3 => 9,
        "cov" => return Err(Error::Format("cov mode requires 3 channels".into())),
        _ => return Err(Error::Format(format!("unknown mode {mode:?}"))),
    };
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let need = n
        .checked_mul(c + extra)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != need {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {need}",
            payload.len()
        )));
    }
    let mut planes = Vec::with_capacity(c + extra);
    for chunk in payload.chunks_exact(n * 4) {
        let mut data = Vec::with_capacity(n);
        for b in chunk.chunks_exact(4) {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::Format("non-finite value in payload".into()));
            }
            data.push(v as f64);
        }
        planes.push(ImagePlane::new(w, h, data)?);
    }
    let unc = planes.split_off(c);
    let img = match mode {
        "diag" => UncertainImage::diagonal(planes, unc),
        _ => UncertainImage::covariance(planes, unc),
    };
    img.map_err(|e| Error::Format(format!("invalid image: {e}")))
}

pub fn write_ufi(img: &UncertainImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(img)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_ufi(path: impl AsRef<Path>) -> Result<UncertainImage> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pixel() -> UncertainImage {
        UncertainImage::diagonal(
            vec![ImagePlane::filled(1, 1, 2.0)],
            vec![ImagePlane::filled(1, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn single_pixel_layout() {
        let bytes = encode(&one_pixel()).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..16], b"UFI1 1 1 1 diag\n");
        assert_eq!(&bytes[16..20], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[20..], &1.0f32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), one_pixel());
    }

    #[test]
    fn rejects_negative_variance() {
        let mut bytes = encode(&one_pixel()).unwrap();
        bytes[20..].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_magic_truncation_and_nan() {
        let good = encode(&one_pixel()).unwrap();
        let mut bad = good.clone();
        bad[3] = b'2';
        assert!(decode(&bad).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut nan = good.clone();
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
        assert!(decode(b"").is_err());
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let mean = vec![ImagePlane::filled(1, 1, 1.0); 3];
        let mut cov: Vec<_> = (0..9).map(|_| ImagePlane::filled(1, 1, 0.0)).collect();
        cov[0] = ImagePlane::filled(1, 1, 1.0);
        let img = UncertainImage::covariance(mean, cov).unwrap();
        let mut bytes = encode(&img).unwrap();
        let off = bytes.len() - 9 * 4 + 4; // cov[0][1]
        bytes[off..off + 4].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    fn arb_image() -> impl Strategy<Value = UncertainImage> {
        (1usize..5, 1usize..5, prop::bool::ANY, prop::bool::ANY).prop_flat_map(|(w, h, three, cov)| {
            let c = if three || cov { 3 } else { 1 };
            let n = w * h;
            let mean = prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO, c * n);
            let unc = prop::collection::vec(0.0f32..1e30, if cov { 6 * n } else { c * n });
            (Just((w, h, c, cov)), mean, unc)
        })
        .prop_map(|((w, h, c, cov), mean, unc)| {
            let n = w * h;
            let planes = |v: &[f32], k: usize| -> Vec<ImagePlane> {
                (0..k)
                    .map(|i| {
                        ImagePlane::new(w, h, v[i * n..(i + 1) * n].iter().map(|&x| x as f64).collect())
                            .unwrap()
                    })
                    .collect()
            };
            let mean = planes(&mean, c);
            if cov {
                let tri = planes(&unc, 6);
                let idx = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
                let cov = (0..9).map(|k| tri[idx[k / 3][k % 3]].clone()).collect();
                UncertainImage::covariance(mean, cov).unwrap()
            } else {
                UncertainImage::diagonal(mean, planes(&unc, c)).unwrap()
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(img in arb_image()) {
            let bytes = encode(&img).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back).unwrap(), bytes);
            prop_assert_eq!(back, img);
        }
    }
}
