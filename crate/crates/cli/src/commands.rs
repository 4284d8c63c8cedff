use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};

use dispmeter::color::{apply_ccm, fit_ccm, ColorCorrection};
use dispmeter::defects::{build_mean_maps, detect, pr_auc, pr_sweep, predict_false_positives};
use dispmeter::formats::{
    correspondence_rows, defect_rows, fmt_num, load_calibration, load_stack, parse_paramsets, patch_rows, read_correspondences,
    read_defects, read_patches, write_calibration, write_csv_file, write_stack, CalibrationSet, Provenance, CORRESPONDENCE_HEADER,
    DEFECT_HEADER, PATCH_HEADER,
};
use dispmeter::geometry::{fit_distortion, refine_corners, CameraGeometry, CornerOptions, Homography, ResamplingSpec};
use dispmeter::hdr::{merge_with, ExposureStack, DEFAULT_SATURATION_FRACTION};
use dispmeter::image::ImagePlane;
use dispmeter::mcvalidate::{mc_propagate, ChainStage, McSource};
use dispmeter::mtf::{esf_to_mtf, estimate_esf, fit_mtf, wiener_deconvolve, EdgeLine, EsfOptions, MtfModel, SignalPsd};
use dispmeter::noise::{fit_gain, fit_read_adc, DarkSample, ExposureMeta, GainFit, MeanVar, NoiseParams};
use dispmeter::pipeline::{correct, Calibration, CorrectOptions, Stage};
use dispmeter::simulate::{
    checkerboard, colour_patches, cos4_vignetting, display_truth, expose, gen_defect_pattern, gen_uniformity_stimulus,
    lattice_correspondences, render_capture, render_edge, scale_for_peak, smooth_scene, GroundTruthCalib, RenderOptions, SceneTruth,
    SpectralModel,
};
use dispmeter::ufi::{read_ufi, write_ufi};
use dispmeter::vdp::{jitter_paramsets, jod_distribution, jod_score, VdpParamSet, ViewingConfig};
use dispmeter::vignette::{estimate_vignette, VignettingMap};
use dispmeter::{Error, Point, Result, UncertainImage};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::config::{self, Config, McSourceKind, SceneKind};
use crate::{CalibrationInputs, Command};

struct Ctx {
    cfg: Config,
    text: String,
    seed: u64,
    command: &'static str,
}

impl Ctx {
    /// Provenance keyed by the configuration text, the seed and the
    /// command's input arguments (output paths excluded).
    fn prov(&self, inputs: &dyn Debug) -> Provenance {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.text.as_bytes());
        h.update([0]);
        h.update(self.seed.to_le_bytes());
        h.update(format!("{inputs:?}").as_bytes());
        let hex: String = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
        Provenance::new(self.command, &hex, Some(self.seed))
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::FitNoise(_) => "fit-noise",
        Command::FitMtf(_) => "fit-mtf",
        Command::FitVignette(_) => "fit-vignette",
        Command::CalibrateGeometry(_) => "calibrate-geometry",
        Command::FitColor(_) => "fit-color",
        Command::Correct(_) => "correct",
        Command::DetectDefects(_) => "detect-defects",
        Command::Vdp(_) => "vdp",
        Command::McValidate(_) => "mc-validate",
    }
}

pub fn run(command: Command, config: Option<&Path>, seed: Option<u64>, workers: Option<usize>) -> Result<()> {
    let (text, cfg) = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let dir = p.parent().unwrap_or(Path::new("."));
            let cfg = config::parse(&text, dir)?;
            (text, cfg)
        }
        None => (String::new(), Config::default()),
    };
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let ctx = Ctx { cfg, text, seed, command: command_name(&command) };
    match command {
        Command::Simulate(a) => simulate(&ctx, &a.out),
        Command::FitNoise(a) => fit_noise(&ctx, a),
        Command::FitMtf(a) => fit_mtf_cmd(&ctx, a),
        Command::FitVignette(a) => fit_vignette(&ctx, a),
        Command::CalibrateGeometry(a) => calibrate_geometry(&ctx, a),
        Command::FitColor(a) => fit_color(&ctx, a),
        Command::Correct(a) => correct_cmd(&ctx, a),
        Command::DetectDefects(a) => detect_defects(&ctx, a),
        Command::Vdp(a) => vdp(&ctx, a),
        Command::McValidate(a) => mc_validate(&ctx, a),
    }
}

// ---------------------------------------------------------------------------
// helpers

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn value<T: serde::Serialize>(v: &T) -> Result<Value> {
    Value::try_from(v).map_err(|e| Error::Format(format!("toml: {e}")))
}

/// Writes `body` with a `[provenance]` table.
fn write_report(path: &Path, prov: &Provenance, mut body: Table) -> Result<()> {
    ensure_parent(path)?;
    body.insert("provenance".into(), value(prov)?);
    let text = toml::to_string(&body).map_err(|e| Error::Format(format!("toml: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

fn table(entries: Vec<(&str, Value)>) -> Table {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn camera_geometry(cfg: &Config) -> Result<CameraGeometry> {
    let c = &cfg.camera;
    let h = match c.homography {
        Some(rows) => Homography::from_rows(rows)?,
        None => Homography::from_rows([[c.pitch, 0.0, 0.0], [0.0, c.pitch, 0.0], [0.0, 0.0, 1.0]])?,
    };
    c.distortion.validate()?;
    Ok(CameraGeometry::new(h, c.distortion, c.sensor_width, c.sensor_height))
}

fn ground_truth(cfg: &Config) -> Result<GroundTruthCalib> {
    let c = &cfg.camera;
    if c.sensor_width == 0 || c.sensor_height == 0 {
        return Err(Error::Config("sensor size must be positive".into()));
    }
    c.noise.validate()?;
    if let Some(m) = &c.mtf {
        m.validate()?;
    }
    let geometry = camera_geometry(cfg)?;
    let vignetting = if c.vignetting_focal > 0.0 {
        Some(cos4_vignetting(c.sensor_width, c.sensor_height, c.vignetting_focal * geometry.norm_radius())?)
    } else {
        None
    };
    Ok(GroundTruthCalib { noise: c.noise.clone(), mtf: c.mtf, vignetting, geometry, spectral: SpectralModel::reference() })
}

fn exposure_plan(cfg: &Config) -> Result<Vec<ExposureMeta>> {
    let e = &cfg.exposure;
    if e.times.is_empty() || e.gains.is_empty() || e.repeats == 0 {
        return Err(Error::Config("exposure plan needs times, gains and repeats >= 1".into()));
    }
    let mut plan = Vec::new();
    for &g in &e.gains {
        for &t in &e.times {
            for _ in 0..e.repeats {
                plan.push(ExposureMeta::new(t, g).map_err(|err| Error::Config(format!("exposure: {err}")))?);
            }
        }
    }
    Ok(plan)
}

fn psd(cfg: &Config) -> SignalPsd {
    match cfg.correct.psd_radius {
        0 => SignalPsd::Periodogram,
        r => SignalPsd::Smoothed { radius: r },
    }
}

fn stack_plan(stack: &ExposureStack) -> Vec<ExposureMeta> {
    stack.frames.iter().map(|f| f.meta).collect()
}

// ---------------------------------------------------------------------------
// simulate

fn simulate(ctx: &Ctx, out: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&());
    ensure_dir(out)?;
    let gt = ground_truth(cfg)?;
    let plan = exposure_plan(cfg)?;
    let s = &cfg.scene;
    let opts = RenderOptions {
        reconstruction: s.reconstruction,
        subsamples: s.subsamples,
        full_scale: cfg.camera.full_scale,
        shot_noise: true,
        seed: ctx.seed,
    };
    let (w, h) = (cfg.display.width, cfg.display.height);
    let scale = scale_for_peak(&gt.spectral, s.peak)?;
    let mut outputs = vec!["stack.toml".to_string(), "calibration.toml".into(), "vignetting.ufi".into()];

    let (sw, sh) = (cfg.camera.sensor_width, cfg.camera.sensor_height);
    let vig_planes = |v: &Option<VignettingMap>| match v {
        Some(m) => m.planes()[0].clone(),
        None => ImagePlane::filled(sw, sh, 1.0),
    };
    let stack = match s.kind {
        SceneKind::Flat => {
            let v = vig_planes(&gt.vignetting);
            expose(&[v.map(|x| x * s.peak), v.map(|x| x * s.peak), v.map(|x| x * s.peak)], &gt.noise, &plan, &opts)?
        }
        SceneKind::Dark => {
            let z = ImagePlane::zeros(sw, sh);
            expose(&[z.clone(), z.clone(), z], &gt.noise, &plan, &opts)?
        }
        SceneKind::Edge => {
            let line = EdgeLine { angle: s.edge_angle_deg.to_radians(), offset: s.edge_offset };
            let e = render_edge(sw, sh, line, s.edge_low, s.edge_high, gt.mtf.as_ref(), s.subsamples).map(|x| x * s.peak);
            expose(&[e.clone(), e.clone(), e], &gt.noise, &plan, &opts)?
        }
        kind => {
            let scene = match kind {
                SceneKind::Smooth => smooth_scene(w, h, scale)?,
                SceneKind::Checkerboard => SceneTruth { scale, ..checkerboard(w, h, s.block)?.0 },
                SceneKind::Uniformity => gen_uniformity_stimulus(s.contrast, s.mean_luminance, w, h)?,
                SceneKind::Defects => {
                    let (scene, pat) = gen_defect_pattern(s.defect_size, s.defect_contrast, s.defect_count, w, h, ctx.seed)?;
                    write_csv_file(out.join("defects.csv"), Some(&prov), &DEFECT_HEADER, &defect_rows(&pat))?;
                    outputs.push("defects.csv".into());
                    SceneTruth { scale, ..scene }
                }
                _ => unreachable!("sensor-level scenes handled above"),
            };
            let o = cfg.correct.oversampling;
            let truth = display_truth(&scene, &gt, s.reconstruction, o)?;
            let xyz = apply_ccm(&truth, &ColorCorrection::Linear(gt.color_matrix()?))?;
            write_ufi(&truth, out.join("truth.ufi"))?;
            write_ufi(&xyz, out.join("truth_xyz.ufi"))?;
            outputs.push("truth.ufi".into());
            outputs.push("truth_xyz.ufi".into());
            render_capture(&scene, &gt, &plan, &opts)?
        }
    };
    write_stack(&stack, out.join("stack.toml"), "frame", Some(prov.clone()))?;

    let set = CalibrationSet {
        provenance: Some(prov.clone()),
        oversampling: cfg.correct.oversampling,
        kernel: cfg.correct.kernel,
        vignetting: "vignetting.ufi".into(),
        noise: gt.noise.clone(),
        mtf: gt.mtf.unwrap_or_else(MtfModel::identity),
        geometry: gt.geometry.clone(),
        color: ColorCorrection::Linear(gt.color_matrix()?),
    };
    let vig = VignettingMap::new(vec![vig_planes(&gt.vignetting)])?;
    write_calibration(&set, &vig, out.join("calibration.toml"))?;

    let pairs = lattice_correspondences(&gt.geometry, w, h, s.lattice_step, s.lattice_noise, ctx.seed)?;
    write_csv_file(out.join("correspondences.csv"), Some(&prov), &CORRESPONDENCE_HEADER, &correspondence_rows(&pairs))?;
    let patches = colour_patches(&gt.spectral, scale, s.patch_count, ctx.seed)?;
    write_csv_file(out.join("patches.csv"), Some(&prov), &PATCH_HEADER, &patch_rows(&patches))?;
    outputs.push("correspondences.csv".into());
    outputs.push("patches.csv".into());
    for i in 0..stack.frames.len() {
        outputs.push(format!("frame_{i:03}.ufi"));
    }
    outputs.sort();
    let body = table(vec![
        ("outputs", value(&outputs)?),
        ("display_width", value(&w)?),
        ("display_height", value(&h)?),
        ("scene_scale", value(&scale)?),
    ]);
    write_report(&out.join("manifest.toml"), &prov, body)
}

// ---------------------------------------------------------------------------
// fit-noise

/// Mean and half the variance of the difference of each equal-exposure
/// frame pair, per channel. Averaging over pixels keeps the variance affine
/// in the mean even when the field is not uniform.
fn pair_stats(stack: &ExposureStack) -> Result<Vec<(ExposureMeta, Vec<MeanVar>)>> {
    if stack.frames.len() % 2 != 0 {
        return Err(Error::Config("noise stacks need frames in equal-exposure pairs".into()));
    }
    stack
        .frames
        .chunks(2)
        .map(|p| {
            if p[0].meta != p[1].meta {
                return Err(Error::Config("paired frames differ in exposure".into()));
            }
            let stats = p[0]
                .planes
                .iter()
                .zip(&p[1].planes)
                .map(|(a, b)| {
                    let n = a.len() as f64;
                    let mean = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).sum::<f64>() / n;
                    let md = a.data().iter().zip(b.data()).map(|(x, y)| x - y).sum::<f64>() / n;
                    let var = a.data().iter().zip(b.data()).map(|(x, y)| (x - y - md).powi(2)).sum::<f64>() / (n - 1.0) / 2.0;
                    MeanVar { mean, var }
                })
                .collect();
            Ok((p[0].meta, stats))
        })
        .collect()
}

fn fit_noise(ctx: &Ctx, a: crate::FitNoiseArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let bright: Vec<PathBuf> = cfg.fit_noise.bright.iter().cloned().chain(a.bright.iter().cloned()).collect();
    let dark: Vec<PathBuf> = cfg.fit_noise.dark.iter().cloned().chain(a.dark.iter().cloned()).collect();
    if bright.is_empty() && dark.is_empty() {
        return Err(Error::Config("fit-noise needs bright or dark stacks".into()));
    }
    let prov = ctx.prov(&(&bright, &dark));
    let mut noise = cfg.camera.noise.clone();
    let nc = 3;
    if !bright.is_empty() {
        let mut samples: Vec<(f64, usize, MeanVar)> = Vec::new();
        for p in &bright {
            for (meta, st) in pair_stats(&load_stack(p, None)?)? {
                for (c, mv) in st.into_iter().enumerate() {
                    samples.push((meta.g, c, mv));
                }
            }
        }
        let mut gains: Vec<f64> = samples.iter().map(|s| s.0).collect();
        gains.sort_by(f64::total_cmp);
        gains.dedup();
        for c in 0..nc {
            let ks = gains
                .iter()
                .map(|&g| {
                    let pts: Vec<MeanVar> = samples.iter().filter(|s| s.0 == g && s.1 == c).map(|s| s.2).collect();
                    fit_gain(&pts, g, GainFit { mean_floor: cfg.fit_noise.mean_floor })
                })
                .collect::<Result<Vec<_>>>()?;
            noise.k[c] = ks.iter().sum::<f64>() / ks.len() as f64;
        }
    }
    let mut clamped = [false; 3];
    if !dark.is_empty() {
        let mut samples: Vec<(usize, DarkSample)> = Vec::new();
        for p in &dark {
            for (meta, st) in pair_stats(&load_stack(p, None)?)? {
                for (c, mv) in st.into_iter().enumerate() {
                    samples.push((c, DarkSample { g: meta.g, var: mv.var }));
                }
            }
        }
        for c in 0..nc {
            let pts: Vec<DarkSample> = samples.iter().filter(|s| s.0 == c).map(|s| s.1).collect();
            let f = fit_read_adc(&pts, noise.k[c])?;
            noise.read_var[c] = f.read_var;
            noise.adc_var[c] = f.adc_var;
            clamped[c] = f.clamped;
            if f.clamped {
                log::warn!("channel {c}: negative noise variance clamped to 0");
            }
        }
    }
    noise.validate()?;
    write_report(&a.out, &prov, table(vec![("noise", value(&noise)?), ("clamped", value(&clamped)?)]))
}

// ---------------------------------------------------------------------------
// fit-mtf

fn channel_average(img: &UncertainImage) -> ImagePlane {
    let n = img.channels() as f64;
    ImagePlane::from_fn(img.width(), img.height(), |r, c| img.mean().iter().map(|p| p.get(r, c)).sum::<f64>() / n)
}

fn fit_mtf_cmd(ctx: &Ctx, a: crate::FitMtfArgs) -> Result<()> {
    let cfg = &ctx.cfg.fit_mtf;
    let prov = ctx.prov(&a.stack);
    let stack = load_stack(&a.stack, Some(&ctx.cfg.camera.noise))?;
    let merged = merge_with(&stack, &stack.params)?;
    let edge = channel_average(&merged.image);
    let line = EdgeLine { angle: cfg.angle_deg.to_radians(), offset: cfg.offset };
    let esf = estimate_esf(&edge, line, EsfOptions { half_width: cfg.half_width })?;
    let samples = esf_to_mtf(&esf)?;
    let fit = fit_mtf(&samples)?;
    let max_dev = samples.freq.iter().zip(&samples.value).map(|(&f, &v)| (fit.model.eval_raw(f) - v).abs()).fold(0.0, f64::max);
    let rows: Vec<Vec<String>> = samples
        .freq
        .iter()
        .zip(&samples.value)
        .map(|(&f, &v)| vec![fmt_num(f), fmt_num(v), fmt_num(fit.model.eval_raw(f))])
        .collect();
    ensure_parent(&a.out)?;
    write_csv_file(a.out.with_extension("csv"), Some(&prov), &["freq", "measured", "fitted"], &rows)?;
    let body = table(vec![("mtf", value(&fit.model)?), ("sse", value(&fit.sse)?), ("max_deviation", value(&max_dev)?)]);
    write_report(&a.out, &prov, body)
}

// ---------------------------------------------------------------------------
// fit-vignette

fn fit_vignette(ctx: &Ctx, a: crate::FitVignetteArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&a.stack);
    let flats = a
        .stack
        .iter()
        .map(|p| {
            let stack = load_stack(p, Some(&cfg.camera.noise))?;
            let img = merge_with(&stack, &stack.params)?.image;
            match (&cfg.camera.mtf, cfg.fit_vignette.deconvolve) {
                (Some(m), true) => Ok(wiener_deconvolve(&img, m, psd(cfg))?.image),
                _ => Ok(img),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let v = estimate_vignette(&flats)?;
    ensure_parent(&a.out)?;
    write_ufi(&UncertainImage::exact(v.planes().to_vec())?, &a.out)?;
    let body = table(vec![("vignetting", value(&a.out.file_name().map(|f| f.to_string_lossy().into_owned()))?)]);
    write_report(&a.out.with_extension("toml"), &prov, body)
}

// ---------------------------------------------------------------------------
// calibrate-geometry

fn calibrate_geometry(ctx: &Ctx, a: crate::CalibrateGeometryArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&(&a.correspondences, &a.capture));
    let mut pairs = read_correspondences(fs::File::open(&a.correspondences)?)?;
    let mut unrefined = 0usize;
    if let Some(cap) = &a.capture {
        let stack = load_stack(cap, Some(&cfg.camera.noise))?;
        let img = channel_average(&merge_with(&stack, &stack.params)?.image);
        let coarse: Vec<Point> = pairs.iter().map(|p| p.1).collect();
        let refined = refine_corners(&img, &coarse, CornerOptions::new(cfg.camera.pitch));
        for (pair, r) in pairs.iter_mut().zip(&refined) {
            pair.1 = r.point;
            unrefined += usize::from(!r.refined);
        }
    }
    let fit = fit_distortion(&pairs, cfg.camera.sensor_width, cfg.camera.sensor_height)?;
    let body = table(vec![
        ("geometry", value(&fit.geometry)?),
        ("rms", value(&fit.rms)?),
        ("correspondences", value(&pairs.len())?),
        ("unrefined", value(&unrefined)?),
    ]);
    write_report(&a.out, &prov, body)
}

// ---------------------------------------------------------------------------
// fit-color

fn fit_color(ctx: &Ctx, a: crate::FitColorArgs) -> Result<()> {
    let prov = ctx.prov(&a.patches);
    let patches = read_patches(fs::File::open(&a.patches)?)?;
    let fit = fit_ccm(&patches, ctx.cfg.fit_color.mode, None)?;
    let body = table(vec![
        ("color", value(&fit.correction)?),
        ("mean_delta_e", value(&fit.mean_delta_e)?),
        ("delta_e", value(&fit.delta_e)?),
        ("white_y", value(&fit.white_y)?),
    ]);
    write_report(&a.out, &prov, body)
}

// ---------------------------------------------------------------------------
// correct

/// Any fit report: only the tables relevant to a calibration are read.
#[derive(Deserialize)]
struct Fragment {
    noise: Option<NoiseParams>,
    mtf: Option<MtfModel>,
    geometry: Option<CameraGeometry>,
    color: Option<ColorCorrection>,
}

fn read_fragment(path: &Path) -> Result<Fragment> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().split_whitespace().collect::<Vec<_>>().join(" "))))
}

fn missing(what: &str, path: &Path) -> Error {
    Error::Config(format!("{} has no [{what}] table", path.display()))
}

/// A base calibration (if any) with individual components replaced.
fn assemble_calibration(inputs: &CalibrationInputs) -> Result<Calibration> {
    let mut noise = None;
    let mut mtf = None;
    let mut geometry = None;
    let mut color = None;
    let mut vignetting = None;
    if let Some(p) = &inputs.calibration {
        let (_, cal) = load_calibration(p)?;
        noise = Some(cal.noise);
        mtf = Some(cal.mtf);
        geometry = Some(cal.geometry);
        color = Some(cal.color);
        vignetting = Some(cal.vignetting);
    }
    if let Some(p) = &inputs.noise {
        noise = Some(read_fragment(p)?.noise.ok_or_else(|| missing("noise", p))?);
    }
    if let Some(p) = &inputs.mtf {
        mtf = Some(read_fragment(p)?.mtf.ok_or_else(|| missing("mtf", p))?);
    }
    if let Some(p) = &inputs.geometry {
        geometry = Some(read_fragment(p)?.geometry.ok_or_else(|| missing("geometry", p))?);
    }
    if let Some(p) = &inputs.color {
        color = Some(read_fragment(p)?.color.ok_or_else(|| missing("color", p))?);
    }
    if let Some(p) = &inputs.vignetting {
        vignetting = Some(VignettingMap::new(read_ufi(p)?.mean().to_vec())?);
    }
    let need = |what: &str| Error::Config(format!("no {what} given (use --calibration or --{what})"));
    let cal = Calibration {
        noise: noise.ok_or_else(|| need("noise"))?,
        mtf: mtf.ok_or_else(|| need("mtf"))?,
        geometry: geometry.ok_or_else(|| need("geometry"))?,
        color: color.ok_or_else(|| need("color"))?,
        vignetting: vignetting.ok_or_else(|| need("vignetting"))?,
    };
    cal.noise.validate()?;
    cal.mtf.validate()?;
    cal.color.validate()?;
    Ok(cal)
}

fn correct_cmd(ctx: &Ctx, a: crate::CorrectArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&(&a.cal, &a.stack, &a.skip));
    let cal = assemble_calibration(&a.cal)?;
    let stack = load_stack(&a.stack, Some(&cal.noise))?;
    let mut opts = CorrectOptions::new(cfg.display.width, cfg.display.height, cfg.correct.oversampling, cfg.correct.kernel);
    opts.psd = psd(cfg);
    opts.skip = cfg.correct.skip.clone();
    for s in &a.skip {
        opts.skip.push(s.parse::<Stage>()?);
    }
    let res = correct(&stack, &cal, &opts)?;
    ensure_dir(&a.out)?;
    write_ufi(&res.display, a.out.join("display.ufi"))?;
    let mut outputs = vec!["display.ufi".to_string()];
    if let Some(xyz) = &res.xyz {
        write_ufi(xyz, a.out.join("xyz.ufi"))?;
        outputs.push("xyz.ufi".into());
    }
    let invalid = res.invalid.iter().filter(|&&b| b).count();
    let mut skipped: Vec<String> = opts.skip.iter().map(|s| format!("{s:?}").to_lowercase()).collect();
    skipped.sort();
    skipped.dedup();
    let body = table(vec![
        ("outputs", value(&outputs)?),
        ("grid_width", value(&res.display.width())?),
        ("grid_height", value(&res.display.height())?),
        ("invalid_samples", value(&invalid)?),
        ("skipped", value(&skipped)?),
    ]);
    write_report(&a.out.join("report.toml"), &prov, body)
}

// ---------------------------------------------------------------------------
// detect-defects

/// `start:stop:step`, inclusive of `stop` within rounding.
pub fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("sweep {s:?} is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (a, b, step) = (v[0], v[1], v[2]);
    if !(step > 0.0 && a.is_finite() && b.is_finite() && b >= a) {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err(Error::Config("sweep has too many points".into()));
    }
    Ok((0..n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect())
}

fn detect_defects(ctx: &Ctx, a: crate::DetectDefectsArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&(&a.input, &a.truth, &a.sweep));
    let img = read_ufi(&a.input)?;
    let o = cfg.correct.oversampling;
    if o == 0 || (img.width() - 1) % o != 0 || (img.height() - 1) % o != 0 {
        return Err(Error::Dimension(format!("{}x{} is not an (o w + 1) x (o h + 1) grid for o = {o}", img.width(), img.height())));
    }
    let (w_d, h_d) = ((img.width() - 1) / o, (img.height() - 1) / o);
    let d = &cfg.defects;
    let size = d.size;
    let nms = d.nms_radius.unwrap_or((o * size) as f64);
    let maps = build_mean_maps(&img, o, size)?;
    let dets = detect(&maps, d.threshold, o, nms, w_d, h_d)?;
    let n_fp = predict_false_positives(&maps, d.threshold, o, w_d, h_d)?;
    ensure_dir(&a.out)?;
    let rows: Vec<Vec<String>> = dets.iter().map(|x| vec![fmt_num(x.center.x), fmt_num(x.center.y), fmt_num(x.score)]).collect();
    write_csv_file(a.out.join("detections.csv"), Some(&prov), &["sx", "sy", "score"], &rows)?;
    let mut body = vec![
        ("threshold", value(&d.threshold)?),
        ("detections", value(&dets.len())?),
        ("predicted_false_positives", value(&n_fp)?),
    ];
    let truth = a.truth.as_ref().map(|p| read_defects(fs::File::open(p)?, w_d, h_d)).transpose()?;
    if let Some(t) = &truth {
        if t.size != size {
            log::warn!("truth defect size {} differs from defects.size {size}", t.size);
        }
    }
    if let Some(sw) = a.sweep.as_deref().or(d.sweep.as_deref()) {
        let thresholds = parse_sweep(sw)?;
        let fps = thresholds.iter().map(|&t| predict_false_positives(&maps, t, o, w_d, h_d)).collect::<Result<Vec<_>>>()?;
        match &truth {
            Some(t) => {
                let pr = pr_sweep(&maps, &thresholds, o, nms, t)?;
                let rows: Vec<Vec<String>> = pr
                    .iter()
                    .zip(&fps)
                    .map(|(p, f)| {
                        vec![
                            fmt_num(p.threshold),
                            p.detections.to_string(),
                            p.true_positives.to_string(),
                            fmt_num(p.precision),
                            fmt_num(p.recall),
                            fmt_num(*f),
                        ]
                    })
                    .collect();
                let header = ["threshold", "detections", "true_positives", "precision", "recall", "predicted_false_positives"];
                write_csv_file(a.out.join("pr.csv"), Some(&prov), &header, &rows)?;
                if pr.len() >= 2 {
                    body.push(("pr_auc", value(&pr_auc(&pr)?)?));
                }
            }
            None => {
                let rows = thresholds
                    .iter()
                    .zip(&fps)
                    .map(|(&t, f)| Ok(vec![fmt_num(t), detect(&maps, t, o, nms, w_d, h_d)?.len().to_string(), fmt_num(*f)]))
                    .collect::<Result<Vec<_>>>()?;
                write_csv_file(a.out.join("pr.csv"), Some(&prov), &["threshold", "detections", "predicted_false_positives"], &rows)?;
            }
        }
    }
    write_report(&a.out.join("report.toml"), &prov, table(body))
}

// ---------------------------------------------------------------------------
// vdp

fn vdp(ctx: &Ctx, a: crate::VdpArgs) -> Result<()> {
    let cfg = &ctx.cfg.vdp;
    let prov = ctx.prov(&(&a.test, &a.reference, &a.paramsets));
    let test = read_ufi(&a.test)?;
    let reference = read_ufi(&a.reference)?;
    if reference.channels() != 3 {
        return Err(Error::Dimension("reference must be a 3-channel XYZ image".into()));
    }
    let lum = cfg.mean_luminance.unwrap_or_else(|| reference.mean()[1].mean());
    let view = ViewingConfig::new(cfg.ppd, lum)?;
    let sets = match a.paramsets.as_ref().or(cfg.paramsets.as_ref()) {
        Some(p) => parse_paramsets(&fs::read_to_string(p)?)?,
        None => jitter_paramsets(&VdpParamSet::default(), cfg.paramset_count, cfg.jitter, ctx.seed)?,
    };
    let point = jod_score(test.mean(), reference.mean(), &view, &sets[0])?;
    let dist = jod_distribution(&test, &reference, &view, &sets, cfg.samples, ctx.seed)?;
    ensure_dir(&a.out)?;
    let np = sets.len();
    let rows: Vec<Vec<String>> =
        dist.samples.iter().enumerate().map(|(i, &j)| vec![(i / np).to_string(), (i % np).to_string(), fmt_num(j)]).collect();
    write_csv_file(a.out.join("jod.csv"), Some(&prov), &["sample", "paramset", "jod"], &rows)?;
    write_ufi(&UncertainImage::exact(vec![dist.heatmap.clone()])?, a.out.join("heatmap.ufi"))?;
    let body = table(vec![
        ("jod", value(&point.jod)?),
        ("mean", value(&dist.mean)?),
        ("std", value(&dist.std)?),
        ("min", value(&dist.min)?),
        ("max", value(&dist.max)?),
        ("samples", value(&dist.samples.len())?),
        ("mean_luminance", value(&lum)?),
    ]);
    write_report(&a.out.join("report.toml"), &prov, body)
}

// ---------------------------------------------------------------------------
// mc-validate

fn mc_validate(ctx: &Ctx, a: crate::McValidateArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let prov = ctx.prov(&(&a.cal, &a.input, &a.stack));
    let cal = assemble_calibration(&a.cal)?;
    let mut chain = Vec::new();
    for s in &cfg.mc.stages {
        chain.push(match s.as_str() {
            "mtf" => ChainStage::Mtf { model: cal.mtf, psd: psd(cfg) },
            "vignette" => ChainStage::Vignette(cal.vignetting.clone()),
            "resample" => ChainStage::Resample {
                geometry: cal.geometry.clone(),
                spec: ResamplingSpec::new(cfg.correct.oversampling, cfg.correct.kernel),
                display_width: cfg.display.width,
                display_height: cfg.display.height,
            },
            "color" => ChainStage::Color(cal.color.clone()),
            other => return Err(Error::Config(format!("unknown chain stage {other:?}"))),
        });
    }
    let source = match cfg.mc.source {
        McSourceKind::Gaussian => {
            let p = a.input.as_ref().ok_or_else(|| Error::Config("gaussian source needs --input".into()))?;
            McSource::Gaussian(read_ufi(p)?)
        }
        McSourceKind::Exposures => {
            let p = a.stack.as_ref().ok_or_else(|| Error::Config("exposures source needs --stack".into()))?;
            let stack = load_stack(p, Some(&cal.noise))?;
            let signal = merge_with(&stack, &cal.noise)?.image.mean().to_vec();
            McSource::Exposures {
                signal,
                noise: cal.noise.clone(),
                plan: stack_plan(&stack),
                full_scale: stack.saturation / DEFAULT_SATURATION_FRACTION,
            }
        }
    };
    let rep = mc_propagate(&chain, &source, cfg.mc.samples, ctx.seed)?;
    ensure_dir(&a.out)?;
    write_ufi(&UncertainImage::diagonal(rep.empirical_mean.clone(), rep.empirical_variance.clone())?, a.out.join("empirical.ufi"))?;
    let analytic_var: Vec<ImagePlane> = rep.analytic_sigma.iter().map(|s| s.map(|v| v * v)).collect();
    write_ufi(&UncertainImage::diagonal(rep.analytic_mean.clone(), analytic_var)?, a.out.join("analytic.ufi"))?;
    let body = table(vec![
        ("rmse", value(&rep.rmse)?),
        ("rrmse", value(&rep.rrmse)?),
        ("samples", value(&rep.n_samples)?),
        ("excluded", value(&rep.excluded.iter().filter(|&&b| b).count())?),
        ("stages", value(&cfg.mc.stages)?),
    ]);
    write_report(&a.out.join("report.toml"), &prov, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_inclusive() {
        let s = parse_sweep("0.90:0.945:0.005").unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s[0], 0.9);
        assert_eq!(s[9], 0.945);
        assert!(parse_sweep("1:0:0.1").is_err());
        assert!(parse_sweep("0:1").is_err());
        assert!(parse_sweep("0:1:0").is_err());
    }
}
