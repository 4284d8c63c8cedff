mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dispmeter::color::ColorCorrection;
use dispmeter::geometry::{Kernel, ResamplingSpec};
use dispmeter::mcvalidate::{mc_propagate, ChainStage, McSource};
use dispmeter::mtf::{MtfModel, SignalPsd};
use dispmeter::simulate::{render_radiance, smooth_scene, RenderOptions};
use dispmeter::vignette::VignettingMap;
use dispmeter::{Error, ImagePlane, UncertainImage};

fn flat_input(w: usize, h: usize, mean: f64, var: f64) -> UncertainImage {
    UncertainImage::diagonal(vec![ImagePlane::from_fn(w, h, |r, c| mean + (r * w + c) as f64)], vec![ImagePlane::filled(w, h, var)]).unwrap()
}

#[test]
fn identity_chain_matches_input_sigma() {
    let input = flat_input(8, 8, 100.0, 4.0);
    let rep = mc_propagate(&[], &McSource::Gaussian(input), 10_000, 1).unwrap();
    for s in rep.empirical_sigma()[0].data() {
        assert!((s / 2.0 - 1.0).abs() <= 0.03, "{s}");
    }
}

#[test]
fn half_vignetting_doubles_sigma() {
    let input = flat_input(8, 8, 100.0, 4.0);
    let v = VignettingMap::new(vec![ImagePlane::filled(8, 8, 0.5)]).unwrap();
    let rep = mc_propagate(&[ChainStage::Vignette(v)], &McSource::Gaussian(input), 10_000, 2).unwrap();
    for (e, a) in rep.empirical_sigma()[0].data().iter().zip(rep.analytic_sigma[0].data()) {
        assert_eq!(*a, 4.0);
        assert!((e / 4.0 - 1.0).abs() <= 0.03, "{e}");
    }
}

#[test]
fn linear_stage_converges_at_root_n() {
    let input = flat_input(16, 16, 50.0, 9.0);
    let v = VignettingMap::new(vec![ImagePlane::from_fn(16, 16, |r, c| 0.5 + 0.5 * ((r + c) as f64 / 30.0))]).unwrap();
    let chain = [ChainStage::Vignette(v)];
    let rmse: Vec<f64> = [100, 400, 1600].iter().map(|&n| mc_propagate(&chain, &McSource::Gaussian(input.clone()), n, 3).unwrap().rmse).collect();
    // quadrupling n should halve the error
    for pair in rmse.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((1.4..=2.8).contains(&ratio), "{rmse:?}");
    }
}

fn conservative_fraction(chain: &[ChainStage], input: UncertainImage, n: usize) -> f64 {
    let rep = mc_propagate(chain, &McSource::Gaussian(input), n, 4).unwrap();
    let tol = 1.0 - 3.0 / (n as f64).sqrt();
    let (mut ok, mut total) = (0usize, 0usize);
    for c in 0..rep.analytic_sigma.len() {
        let emp = rep.empirical_sigma();
        for i in (0..rep.excluded.len()).filter(|&i| !rep.excluded[i]) {
            total += 1;
            if rep.analytic_sigma[c].data()[i] >= emp[c].data()[i] * tol {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}

#[test]
fn resampling_and_mtf_inversion_are_conservative() {
    let g = common::rig(64, 4.0, 0.02);
    let w = 64;
    let input = UncertainImage::diagonal(
        vec![ImagePlane::from_fn(w, w, |r, c| 1000.0 + 200.0 * ((r as f64 * 0.2).sin() + (c as f64 * 0.15).cos()))],
        vec![ImagePlane::filled(w, w, 400.0)],
    )
    .unwrap();
    for kernel in [Kernel::Nearest, Kernel::Bilinear, Kernel::Bicubic] {
        let chain = [ChainStage::Resample { geometry: g.geometry.clone(), spec: ResamplingSpec::new(4, kernel), display_width: 12, display_height: 12 }];
        let f = conservative_fraction(&chain, input.clone(), 400);
        assert!(f >= 0.95, "{kernel:?}: {f}");
    }
    let chain = [ChainStage::Mtf { model: MtfModel::reference_camera(), psd: SignalPsd::Smoothed { radius: 4 } }];
    let f = conservative_fraction(&chain, input, 400);
    assert!(f >= 0.95, "mtf: {f}");
}

#[test]
fn reports_are_reproducible() {
    let input = flat_input(6, 5, 10.0, 1.0);
    let a = mc_propagate(&[], &McSource::Gaussian(input.clone()), 50, 9).unwrap();
    let b = mc_propagate(&[], &McSource::Gaussian(input), 50, 9).unwrap();
    assert_eq!(a.empirical_variance, b.empirical_variance);
    assert_eq!(a.rmse, b.rmse);
}

#[test]
fn impure_stage_is_a_contract_violation() {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let stage = ChainStage::Custom {
        name: "drift".into(),
        f: Arc::new(move |img: &UncertainImage| {
            let k = counter.fetch_add(1, Ordering::SeqCst) as f64;
            UncertainImage::exact(img.mean().iter().map(|p| p.map(|v| v + k)).collect())
        }),
    };
    let e = mc_propagate(&[stage], &McSource::Gaussian(flat_input(4, 4, 1.0, 1.0)), 10, 0).unwrap_err();
    assert!(matches!(e, Error::Contract(_)), "{e}");
}

#[test]
fn too_few_samples() {
    assert!(mc_propagate(&[], &McSource::Gaussian(flat_input(4, 4, 1.0, 1.0)), 1, 0).is_err());
}

/// Raw exposures of a 128x128 capture pushed through the whole chain.
fn full_chain_rrmse(n: usize) -> (f64, f64) {
    let mut g = common::rig(128, 4.3, 0.05);
    let scene = smooth_scene(24, 24, common::scale_for_peak(&g, 40_000.0)).unwrap();
    g.mtf = Some(MtfModel::reference_camera());
    let signal = render_radiance(&scene, &g, &RenderOptions::default()).unwrap();
    let cal = common::true_calibration(&g);
    let source = McSource::Exposures { signal, noise: g.noise.clone(), plan: common::plan(&[0.125, 0.25, 0.5, 1.0]), full_scale: 65535.0 };
    let full = [
        ChainStage::Mtf { model: cal.mtf, psd: SignalPsd::Smoothed { radius: 4 } },
        ChainStage::Vignette(cal.vignetting.clone()),
        ChainStage::Resample { geometry: cal.geometry.clone(), spec: ResamplingSpec::new(4, Kernel::Bilinear), display_width: 24, display_height: 24 },
        ChainStage::Color(cal.color.clone()),
    ];
    let a = mc_propagate(&full, &source, n, 11).unwrap().rrmse;
    let b = mc_propagate(&[ChainStage::Vignette(cal.vignetting)], &source, n, 12).unwrap().rrmse;
    (a, b)
}

#[test]
fn full_chain_on_desk_scale_capture() {
    // the acceptance suite runs the same protocol with 1000 draws
    let (full, linear) = full_chain_rrmse(200);
    assert!(full <= 0.10, "{full}");
    assert!(linear <= 0.02, "{linear}");
}

#[test]
fn rootpoly_color_is_checked_too() {
    let input = UncertainImage::diagonal(
        (0..3).map(|k| ImagePlane::filled(6, 6, 50.0 + 10.0 * k as f64)).collect(),
        (0..3).map(|_| ImagePlane::filled(6, 6, 1.0)).collect(),
    )
    .unwrap();
    let m = nalgebra::Matrix3x6::from_fn(|r, c| if c == r { 1.0 } else if c == 3 + r { 0.1 } else { 0.0 });
    let rep = mc_propagate(&[ChainStage::Color(ColorCorrection::Rootpoly(m))], &McSource::Gaussian(input), 4000, 5).unwrap();
    assert!(rep.rrmse < 0.01, "{}", rep.rrmse);
}
