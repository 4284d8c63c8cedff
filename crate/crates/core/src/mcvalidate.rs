//! Monte Carlo check of the analytic uncertainty carried through a chain of
//! correction stages.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::color::{apply_ccm, ColorCorrection};
use crate::error::{Error, Result};
use crate::geometry::{resample_to_display, CameraGeometry, ResamplingSpec};
use crate::hdr::{merge_with, ExposureStack, Frame};
use crate::image::{covariance_factors, draw_gaussian, ImagePlane, Mask, UncertainImage};
use crate::mtf::{wiener_deconvolve, MtfModel, SignalPsd, WienerFilter};
use crate::noise::{ExposureMeta, NoiseParams};
use crate::simulate::{expose, Reconstruction, RenderOptions};
use crate::vignette::{correct_vignette, VignettingMap};

type CustomFn = dyn Fn(&UncertainImage) -> Result<UncertainImage> + Send + Sync;

/// One step of a chain under test.
#[derive(Clone)]
pub enum ChainStage {
    /// Wiener MTF inversion. The filter is designed once on the analytic
    /// input and then applied unchanged to every draw.
    Mtf { model: MtfModel, psd: SignalPsd },
    Vignette(VignettingMap),
    Resample { geometry: CameraGeometry, spec: ResamplingSpec, display_width: usize, display_height: usize },
    Color(ColorCorrection),
    /// Any other stage; it must be a pure function of its input.
    Custom { name: String, f: Arc<CustomFn> },
}

impl std::fmt::Debug for ChainStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChainStage::Mtf { .. } => "mtf",
            ChainStage::Vignette(_) => "vignette",
            ChainStage::Resample { .. } => "resample",
            ChainStage::Color(_) => "color",
            ChainStage::Custom { name, .. } => name,
        })
    }
}

/// Where the draws come from.
#[derive(Clone, Debug)]
pub enum McSource {
    /// Per-pixel normal with the image's mean and (co)variance.
    Gaussian(UncertainImage),
    /// Raw exposure stacks drawn from the camera noise model around a
    /// noise-free signal (DN/s per channel) and merged with `noise`.
    Exposures { signal: Vec<ImagePlane>, noise: NoiseParams, plan: Vec<ExposureMeta>, full_scale: f64 },
}

#[derive(Clone, Debug)]
pub struct McReport {
    pub empirical_mean: Vec<ImagePlane>,
    pub empirical_variance: Vec<ImagePlane>,
    /// Mean and sigma predicted by the chain itself.
    pub analytic_mean: Vec<ImagePlane>,
    pub analytic_sigma: Vec<ImagePlane>,
    /// Samples left out of the error summary (invalid output or mean near 0).
    pub excluded: Mask,
    pub rmse: f64,
    pub rrmse: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl McReport {
    pub fn empirical_sigma(&self) -> Vec<ImagePlane> {
        self.empirical_variance.iter().map(|v| v.map(f64::sqrt)).collect()
    }
}

/// A stage with everything that depends on the analytic input fixed.
enum Frozen {
    Filter(Vec<WienerFilter>),
    Plain(ChainStage),
}

fn mean_only(img: &UncertainImage) -> Result<UncertainImage> {
    UncertainImage::exact(img.mean().to_vec())
}

fn apply_plain(stage: &ChainStage, img: &UncertainImage, invalid: Option<&Mask>) -> Result<(UncertainImage, Option<Mask>)> {
    Ok(match stage {
        ChainStage::Mtf { model, psd } => (wiener_deconvolve(img, model, *psd)?.image, None),
        ChainStage::Vignette(v) => (correct_vignette(img, v)?, None),
        ChainStage::Resample { geometry, spec, display_width, display_height } => {
            let r = resample_to_display(img, invalid, geometry, *spec, *display_width, *display_height)?;
            (r.image, Some(r.invalid))
        }
        ChainStage::Color(cc) => (apply_ccm(img, cc)?, None),
        ChainStage::Custom { f, .. } => (f(img)?, None),
    })
}

impl Frozen {
    fn apply(&self, img: &UncertainImage) -> Result<UncertainImage> {
        match self {
            Frozen::Filter(filters) => {
                let planes = img.mean().iter().zip(filters).map(|(p, f)| f.apply(p)).collect::<Result<Vec<_>>>()?;
                UncertainImage::exact(planes)
            }
            Frozen::Plain(s) => Ok(apply_plain(s, img, None)?.0),
        }
    }
}

/// Runs the analytic pass, freezing data-dependent stages and checking each
/// stage is pure. Returns the output, the frozen chain and the invalid mask.
fn analytic_pass(chain: &[ChainStage], input: UncertainImage, mut invalid: Option<Mask>) -> Result<(UncertainImage, Vec<Frozen>, Option<Mask>)> {
    let mut img = input;
    let mut frozen = Vec::with_capacity(chain.len());
    for stage in chain {
        let (out, mask) = apply_plain(stage, &img, invalid.as_ref())?;
        let (again, _) = apply_plain(stage, &img, invalid.as_ref())?;
        if again != out {
            return Err(Error::Contract(format!("stage {stage:?} gave different results on identical input")));
        }
        if let Some(m) = mask {
            invalid = Some(m);
        }
        frozen.push(match stage {
            ChainStage::Mtf { model, psd } => {
                let filters = (0..img.channels())
                    .map(|c| WienerFilter::design(&img.mean()[c], img.variance(c).mean(), model, *psd))
                    .collect::<Result<Vec<_>>>()?;
                Frozen::Filter(filters)
            }
            s => Frozen::Plain(s.clone()),
        });
        img = out;
    }
    Ok((img, frozen, invalid))
}

/// Samples per parallel batch; fixed so that results do not depend on the
/// worker count.
const BATCH: usize = 32;

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

fn expected_stack(signal: &[ImagePlane], noise: &NoiseParams, plan: &[ExposureMeta], full_scale: f64) -> Result<ExposureStack> {
    let frames = plan
        .iter()
        .map(|&meta| {
            let planes = signal
                .iter()
                .enumerate()
                .map(|(c, s)| s.map(|v| (noise.k[c] * (v / noise.k[c] + noise.dark_offset) * meta.t * meta.g).min(full_scale)))
                .collect();
            Frame { planes, meta }
        })
        .collect();
    ExposureStack::new(frames, noise.clone(), full_scale)
}

/// Pushes `n` draws from `source` through `chain` and compares the
/// empirical per-pixel sigma with the analytic one.
///
/// `rmse = sqrt(mean((s_a - s_e)^2))`, `rrmse = sqrt(mean(((s_a - s_e)/mu)^2))`
/// over valid samples of every channel, with `mu` the analytic mean;
/// samples with `|mu| < 1e-6 max|mu|` are left out.
pub fn mc_propagate(chain: &[ChainStage], source: &McSource, n: usize, seed: u64) -> Result<McReport> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    let (analytic_in, factors, merge_invalid) = match source {
        McSource::Gaussian(img) => (img.clone(), Some(covariance_factors(img)?), None),
        McSource::Exposures { signal, noise, plan, full_scale } => {
            let m = merge_with(&expected_stack(signal, noise, plan, *full_scale)?, noise)?;
            (m.image, None, Some(m.invalid))
        }
    };
    let (analytic, frozen, out_invalid) = analytic_pass(chain, analytic_in, merge_invalid)?;

    let draw = |s: usize| -> Result<UncertainImage> {
        match source {
            McSource::Gaussian(img) => {
                let f = factors.as_ref().expect("gaussian factors");
                UncertainImage::exact(draw_gaussian(img, f, seed, s as u64))
            }
            McSource::Exposures { signal, noise, plan, full_scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let opts = RenderOptions {
                    reconstruction: Reconstruction::Box,
                    subsamples: 1,
                    full_scale: *full_scale,
                    shot_noise: true,
                    seed: rng.random(),
                };
                mean_only(&merge_with(&expose(signal, noise, plan, &opts)?, noise)?.image)
            }
        }
    };
    let run = |s: usize| -> Result<UncertainImage> {
        let mut img = draw(s)?;
        for st in &frozen {
            img = st.apply(&img)?;
        }
        Ok(img)
    };

    let nc = analytic.channels();
    let npx = analytic.pixels();
    let mu_a: Vec<f64> = analytic.mean().iter().flat_map(|p| p.data().iter().copied()).collect();
    // per batch: sums of deviations from the analytic mean and their squares
    let mut partial: Vec<Vec<f64>> = Vec::new();
    for start in (0..n).step_by(BATCH) {
        let end = (start + BATCH).min(n);
        let outs: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|s| {
                let img = run(s)?;
                if img.channels() != nc || img.pixels() != npx {
                    return Err(Error::Contract("chain output shape changed between draws".into()));
                }
                let mut v = Vec::with_capacity(2 * nc * npx);
                let flat = img.mean().iter().flat_map(|p| p.data().iter().copied());
                let d: Vec<f64> = flat.zip(&mu_a).map(|(x, m)| x - m).collect();
                v.extend(d.iter().copied());
                v.extend(d.iter().map(|x| x * x));
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        partial.push(pairwise_sum(outs));
    }
    let total = pairwise_sum(partial);
    let nf = n as f64;
    let (w, h) = (analytic.width(), analytic.height());
    let mut emp_mean = Vec::with_capacity(nc);
    let mut emp_var = Vec::with_capacity(nc);
    for c in 0..nc {
        let off = c * npx;
        let m: Vec<f64> = (0..npx).map(|i| mu_a[off + i] + total[off + i] / nf).collect();
        let v: Vec<f64> = (0..npx)
            .map(|i| {
                let (s1, s2) = (total[off + i], total[nc * npx + off + i]);
                ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0)
            })
            .collect();
        emp_mean.push(ImagePlane::new(w, h, m)?);
        emp_var.push(ImagePlane::new(w, h, v)?);
    }

    let sig_a = analytic.sigma();
    let peak = mu_a.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut excluded: Mask = out_invalid.unwrap_or_else(|| vec![false; npx]);
    for i in 0..npx {
        if (0..nc).any(|c| mu_a[c * npx + i].abs() < 1e-6 * peak) {
            excluded[i] = true;
        }
    }
    let (mut se, mut sr, mut cnt) = (0.0, 0.0, 0usize);
    for c in 0..nc {
        for i in (0..npx).filter(|&i| !excluded[i]) {
            let d = sig_a[c].data()[i] - emp_var[c].data()[i].sqrt();
            se += d * d;
            sr += (d / mu_a[c * npx + i]).powi(2);
            cnt += 1;
        }
    }
    if cnt == 0 {
        return Err(Error::Domain("every output sample was excluded".into()));
    }
    Ok(McReport {
        empirical_mean: emp_mean,
        empirical_variance: emp_var,
        analytic_mean: analytic.mean().to_vec(),
        analytic_sigma: sig_a,
        excluded,
        rmse: (se / cnt as f64).sqrt(),
        rrmse: (sr / cnt as f64).sqrt(),
        n_samples: n,
        seed,
    })
}
