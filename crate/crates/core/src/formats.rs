//! Text manifests and CSV tables exchanged between commands.
//!
//! Manifests are TOML. Tables are CSV with a `.` decimal point, `,`
//! separator and LF line endings; an optional leading `#` line records the
//! producing command.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::{ColorCorrection, PatchMeasurement};
use crate::defects::DefectPattern;
use crate::error::{Error, Result};
use crate::geometry::{CameraGeometry, Kernel};
use crate::hdr::{ExposureStack, Frame, DEFAULT_SATURATION_FRACTION};
use crate::image::{Point, UncertainImage};
use crate::mtf::MtfModel;
use crate::noise::{ExposureMeta, NoiseParams};
use crate::pipeline::Calibration;
use crate::ufi::{read_ufi, write_ufi};
use crate::vdp::VdpParamSet;
use crate::vignette::VignettingMap;

/// Which command wrote a file, from which configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Hex digest of the configuration text and flags.
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: &str, seed: Option<u64>) -> Self {
        Provenance {
            tool: "dispmeter".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// The single comment line that heads a CSV table.
    pub fn csv_comment(&self) -> String {
        let mut s = format!("# {} {} command={} config={}", self.tool, self.version, self.command, self.config_hash);
        if let Some(seed) = self.seed {
            s.push_str(&format!(" seed={seed}"));
        }
        s
    }
}

fn toml_error(what: &str, e: impl std::fmt::Display) -> Error {
    let msg = e.to_string();
    Error::Config(format!("{what}: {}", msg.split_whitespace().collect::<Vec<_>>().join(" ")))
}

fn to_toml<T: Serialize>(what: &str, v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| toml_error(what, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

// ---------------------------------------------------------------------------
// exposure stacks

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// UFI file holding the raw DN planes as its mean.
    pub path: String,
    pub t: f64,
    pub g: f64,
}

/// A list of raw frames with their exposure settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Raw clip level, DN.
    pub full_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    #[serde(rename = "frame")]
    pub frames: Vec<FrameEntry>,
}

impl StackManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Config("stack manifest lists no frames".into()));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(Error::Config("full_scale must be > 0".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.path.is_empty() {
                return Err(Error::Config(format!("frame {i} has an empty path")));
            }
            ExposureMeta::new(f.t, f.g).map_err(|e| Error::Config(format!("frame {i}: {e}")))?;
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

pub fn parse_stack_manifest(text: &str) -> Result<StackManifest> {
    let m: StackManifest = toml::from_str(text).map_err(|e| toml_error("stack manifest", e))?;
    m.validate()?;
    Ok(m)
}

/// Loads a stack. Noise parameters come from the manifest, else from
/// `fallback`, else a noiseless camera is assumed.
pub fn load_stack(path: impl AsRef<Path>, fallback: Option<&NoiseParams>) -> Result<ExposureStack> {
    let path = path.as_ref();
    let m = parse_stack_manifest(&fs::read_to_string(path)?)?;
    let frames = m
        .frames
        .iter()
        .map(|f| {
            let img = read_ufi(resolve(path, &f.path))?;
            Ok(Frame { planes: img.mean().to_vec(), meta: ExposureMeta::new(f.t, f.g)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = m.noise.or_else(|| fallback.cloned()).unwrap_or_else(NoiseParams::noiseless);
    ExposureStack::new(frames, noise, m.full_scale)
}

/// Writes each frame as `<prefix>_<i>.ufi` next to the manifest at `path`.
pub fn write_stack(stack: &ExposureStack, path: impl AsRef<Path>, prefix: &str, provenance: Option<Provenance>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(stack.frames.len());
    for (i, f) in stack.frames.iter().enumerate() {
        let name = format!("{prefix}_{i:03}.ufi");
        write_ufi(&UncertainImage::exact(f.planes.clone())?, dir.join(&name))?;
        frames.push(FrameEntry { path: name, t: f.meta.t, g: f.meta.g });
    }
    let m = StackManifest {
        provenance,
        full_scale: stack.saturation / DEFAULT_SATURATION_FRACTION,
        noise: Some(stack.params.clone()),
        frames,
    };
    fs::write(path, to_toml("stack manifest", &m)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// calibration sets

/// Calibration manifest; the vignetting map lives in a UFI file next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Display-grid samples per display pixel.
    pub oversampling: usize,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    /// Path of the vignetting UFI, relative to the manifest.
    pub vignetting: String,
    pub noise: NoiseParams,
    pub mtf: MtfModel,
    pub geometry: CameraGeometry,
    pub color: ColorCorrection,
}

fn default_kernel() -> Kernel {
    Kernel::Bilinear
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        if self.oversampling == 0 {
            return Err(Error::Config("oversampling must be >= 1".into()));
        }
        if self.vignetting.is_empty() {
            return Err(Error::Config("vignetting path is empty".into()));
        }
        if self.geometry.sensor_width == 0 || self.geometry.sensor_height == 0 {
            return Err(Error::Config("sensor size must be positive".into()));
        }
        self.noise.validate()?;
        self.mtf.validate()?;
        self.geometry.distortion.validate()?;
        self.color.validate()?;
        Ok(())
    }
}

pub fn parse_calibration(text: &str) -> Result<CalibrationSet> {
    let c: CalibrationSet = toml::from_str(text).map_err(|e| toml_error("calibration", e))?;
    c.validate()?;
    Ok(c)
}

/// Loads a calibration manifest and its vignetting map, revalidating both.
pub fn load_calibration(path: impl AsRef<Path>) -> Result<(CalibrationSet, Calibration)> {
    let path = path.as_ref();
    let set = parse_calibration(&fs::read_to_string(path)?)?;
    let vpath = resolve(path, &set.vignetting);
    if !vpath.is_file() {
        return Err(Error::Config(format!("vignetting map {} does not exist", vpath.display())));
    }
    let v = VignettingMap::new(read_ufi(&vpath)?.mean().to_vec())?;
    let p = &v.planes()[0];
    if p.width() != set.geometry.sensor_width || p.height() != set.geometry.sensor_height {
        return Err(Error::Dimension(format!(
            "vignetting map is {}x{}, sensor is {}x{}",
            p.width(),
            p.height(),
            set.geometry.sensor_width,
            set.geometry.sensor_height
        )));
    }
    let cal = Calibration {
        noise: set.noise.clone(),
        mtf: set.mtf,
        vignetting: v,
        geometry: set.geometry.clone(),
        color: set.color.clone(),
    };
    Ok((set, cal))
}

/// Writes the manifest to `path` and the vignetting map to the file it names.
pub fn write_calibration(set: &CalibrationSet, vignetting: &VignettingMap, path: impl AsRef<Path>) -> Result<()> {
    set.validate()?;
    let path = path.as_ref();
    write_ufi(&UncertainImage::exact(vignetting.planes().to_vec())?, resolve(path, &set.vignetting))?;
    fs::write(path, to_toml("calibration", set)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// VDP parameter sets

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsetFile {
    #[serde(rename = "paramset")]
    paramsets: Vec<VdpParamSet>,
}

/// Reads `[[paramset]]` tables.
pub fn parse_paramsets(text: &str) -> Result<Vec<VdpParamSet>> {
    let f: ParamsetFile = toml::from_str(text).map_err(|e| toml_error("paramsets", e))?;
    if f.paramsets.is_empty() {
        return Err(Error::Config("no [[paramset]] entries".into()));
    }
    for p in &f.paramsets {
        p.validate()?;
    }
    Ok(f.paramsets)
}

pub fn paramsets_to_toml(sets: &[VdpParamSet]) -> Result<String> {
    to_toml("paramsets", &ParamsetFile { paramsets: sets.to_vec() })
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest text that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a table: provenance comment, header, rows.
pub fn write_csv<W: Write>(out: W, provenance: Option<&Provenance>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = out;
    if let Some(p) = provenance {
        writeln!(out, "{}", p.csv_comment())?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Format(format!("csv row has {} fields, header has {}", r.len(), header.len())));
        }
        w.write_record(r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, provenance: Option<&Provenance>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, provenance, header, rows)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a numeric table whose header must equal `header`. Lines starting
/// with `#` are skipped; every value must be a finite number.
pub fn read_table<R: Read>(src: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(src);
    let got = rdr.headers().map_err(|e| Error::Format(format!("csv header: {e}")))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Format(format!("csv header is {:?}, expected {:?}", got.iter().collect::<Vec<_>>().join(","), header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("csv record {}: {e}", i + 1)))?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!("csv record {}: {} fields, expected {}", i + 1, rec.len(), header.len())));
        }
        let row = rec
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Format(format!("csv record {}: bad number {f:?}", i + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub const CORRESPONDENCE_HEADER: [&str; 4] = ["sx", "sy", "px", "py"];
pub const PATCH_HEADER: [&str; 6] = ["r", "g", "b", "X", "Y", "Z"];
pub const DEFECT_HEADER: [&str; 4] = ["sx", "sy", "size", "contrast"];

/// Display-to-raw point pairs, centred coordinates.
pub fn read_correspondences<R: Read>(src: R) -> Result<Vec<(Point, Point)>> {
    Ok(read_table(src, &CORRESPONDENCE_HEADER)?
        .into_iter()
        .map(|r| (Point::new(r[0], r[1]), Point::new(r[2], r[3])))
        .collect())
}

pub fn correspondence_rows(pairs: &[(Point, Point)]) -> Vec<Vec<String>> {
    pairs.iter().map(|(s, p)| [s.x, s.y, p.x, p.y].iter().map(|&v| fmt_num(v)).collect()).collect()
}

pub fn read_patches<R: Read>(src: R) -> Result<Vec<PatchMeasurement>> {
    read_table(src, &PATCH_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r[4] < 0.0 {
                return Err(Error::Domain(format!("patch {} has negative reference Y", i + 1)));
            }
            Ok(PatchMeasurement { camera_rgb: [r[0], r[1], r[2]], reference_xyz: [r[3], r[4], r[5]] })
        })
        .collect()
}

pub fn patch_rows(patches: &[PatchMeasurement]) -> Vec<Vec<String>> {
    patches
        .iter()
        .map(|p| p.camera_rgb.iter().chain(&p.reference_xyz).map(|&v| fmt_num(v)).collect())
        .collect()
}

/// Defect ground truth; every row must share one size and contrast.
pub fn read_defects<R: Read>(src: R, display_width: usize, display_height: usize) -> Result<DefectPattern> {
    let rows = read_table(src, &DEFECT_HEADER)?;
    let first = rows.first().ok_or_else(|| Error::Format("defect table is empty".into()))?;
    let (size, contrast) = (first[2], first[3]);
    if !(size >= 1.0 && size.fract() == 0.0 && size <= 1e6) || !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::Domain(format!("bad defect size {size} or contrast {contrast}")));
    }
    let (hw, hh) = (display_width as f64 / 2.0, display_height as f64 / 2.0);
    let mut centers = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r[2] != size || r[3] != contrast {
            return Err(Error::Format(format!("defect {} differs in size or contrast", i + 1)));
        }
        if r[0].abs() > hw || r[1].abs() > hh {
            return Err(Error::Range(format!("defect {} lies outside the display", i + 1)));
        }
        centers.push(Point::new(r[0], r[1]));
    }
    Ok(DefectPattern { size: size as usize, contrast, centers, display_width, display_height })
}

pub fn defect_rows(p: &DefectPattern) -> Vec<Vec<String>> {
    p.centers
        .iter()
        .map(|c| vec![fmt_num(c.x), fmt_num(c.y), p.size.to_string(), fmt_num(p.contrast)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DistortionParams, Homography};
    use crate::image::ImagePlane;

    fn calib_set() -> CalibrationSet {
        CalibrationSet {
            provenance: Some(Provenance::new("fit-color", "00ff", Some(3))),
            oversampling: 4,
            kernel: Kernel::Bicubic,
            vignetting: "v.ufi".into(),
            noise: NoiseParams::reference_camera(),
            mtf: MtfModel::reference_camera(),
            geometry: CameraGeometry::new(
                Homography::from_rows([[4.3, 0.02, 3.0], [-0.015, 4.3, -2.0], [1e-6, -2e-6, 1.0]]).unwrap(),
                DistortionParams { k1: 0.05, ..Default::default() },
                6,
                4,
            ),
            color: ColorCorrection::Linear(nalgebra::Matrix3::new(0.4, 0.3, 0.2, 0.2, 0.7, 0.1, 0.0, 0.1, 0.9)),
        }
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = calib_set();
        let v = VignettingMap::new(vec![ImagePlane::from_fn(6, 4, |r, c| 1.0 / (1 + r + c) as f64)]).unwrap();
        let path = dir.path().join("cal.toml");
        write_calibration(&set, &v, &path).unwrap();
        let (back, cal) = load_calibration(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(cal.vignetting.planes()[0].get(1, 1), (1.0f32 / 3.0) as f64);
    }

    #[test]
    fn calibration_missing_vignetting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        fs::write(&path, to_toml("c", &calib_set()).unwrap()).unwrap();
        let e = load_calibration(&path).unwrap_err();
        assert_eq!(e.kind(), "config");
    }

    #[test]
    fn calibration_revalidates() {
        let mut text = to_toml("c", &calib_set()).unwrap();
        text = text.replace("k = [1.303514", "k = [-1.0");
        assert_eq!(parse_calibration(&text).unwrap_err().kind(), "domain");
        assert!(parse_calibration("oversampling = 4\nbogus = 1\n").is_err());
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let planes = vec![ImagePlane::from_fn(3, 2, |r, c| (r * 3 + c) as f64 + 0.5)];
        let frames = vec![
            Frame { planes: planes.clone(), meta: ExposureMeta::new(0.5, 1.0).unwrap() },
            Frame { planes, meta: ExposureMeta::new(1.0, 2.0).unwrap() },
        ];
        let stack = ExposureStack::new(frames, NoiseParams::reference_camera(), 1000.0).unwrap();
        let path = dir.path().join("stack.toml");
        write_stack(&stack, &path, "frame", Some(Provenance::new("simulate", "ab", Some(1)))).unwrap();
        let back = load_stack(&path, None).unwrap();
        assert_eq!(back.frames, stack.frames);
        assert_eq!(back.params, stack.params);
        assert!((back.saturation - stack.saturation).abs() < 1e-9);
    }

    #[test]
    fn stack_manifest_errors() {
        assert!(parse_stack_manifest("full_scale = 10\nframe = []\n").is_err());
        assert!(parse_stack_manifest("full_scale = 10\n[[frame]]\npath = \"a\"\nt = -1\ng = 1\n").is_err());
        assert!(parse_stack_manifest("full_scale = 10\n[[frame]]\npath = \"a\"\nt = 1\ng = 1\n").is_ok());
    }

    #[test]
    fn paramsets_round_trip() {
        let sets = vec![VdpParamSet::default(), VdpParamSet { beta: 3.0, ..Default::default() }];
        let text = paramsets_to_toml(&sets).unwrap();
        assert_eq!(parse_paramsets(&text).unwrap(), sets);
        assert!(parse_paramsets("paramset = []\n").is_err());
    }

    #[test]
    fn csv_format() {
        let mut buf = Vec::new();
        let prov = Provenance::new("detect-defects", "beef", None);
        write_csv(&mut buf, Some(&prov), &["a", "b"], &[vec![fmt_num(0.5), fmt_num(1e-7)], vec!["1".into(), "2".into()]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), "# dispmeter 0.1.0 command=detect-defects config=beef");
        assert_eq!(read_table(text.as_bytes(), &["a", "b"]).unwrap(), vec![vec![0.5, 1e-7], vec![1.0, 2.0]]);
        assert!(read_table(text.as_bytes(), &["a", "c"]).is_err());
        assert!(read_table("a,b\n1,nan\n".as_bytes(), &["a", "b"]).is_err());
        assert!(read_table("a,b\n1\n".as_bytes(), &["a", "b"]).is_err());
    }

    #[test]
    fn typed_tables() {
        let pairs = vec![(Point::new(1.0, -2.0), Point::new(4.5, -8.25))];
        let mut buf = Vec::new();
        write_csv(&mut buf, None, &CORRESPONDENCE_HEADER, &correspondence_rows(&pairs)).unwrap();
        assert_eq!(read_correspondences(buf.as_slice()).unwrap(), pairs);

        let patches = vec![PatchMeasurement { camera_rgb: [0.1, 0.2, 0.3], reference_xyz: [1.0, 2.0, 3.0] }];
        let mut buf = Vec::new();
        write_csv(&mut buf, None, &PATCH_HEADER, &patch_rows(&patches)).unwrap();
        assert_eq!(read_patches(buf.as_slice()).unwrap(), patches);

        let pat = DefectPattern { size: 2, contrast: 0.2, centers: vec![Point::new(-3.0, 4.0)], display_width: 20, display_height: 10 };
        let mut buf = Vec::new();
        write_csv(&mut buf, None, &DEFECT_HEADER, &defect_rows(&pat)).unwrap();
        assert_eq!(read_defects(buf.as_slice(), 20, 10).unwrap(), pat);
        assert_eq!(read_defects(buf.as_slice(), 4, 4).unwrap_err().kind(), "range");
    }
}
