//! Dataset ingestion and the synthetic face generator.
//!
//! Samples are procedural faces (face ellipse, eyes, brows, mouth arc)
//! whose class-discriminative geometry lives exactly where the AU rules
//! look: mouth curvature separates smile/frown/neutral, eye openness and
//! mouth opening mark surprise. Every sample ships its true landmark
//! coordinates so the attention path runs without a landmark detector.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attention::{self, LandmarkSet, RawLandmarks};
use crate::error::{Error, Result};
use crate::interp::bilinear_plane;
use crate::rng::{self, Prng};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

/// One dataset record: paths are relative to the manifest root.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub landmark_path: String,
    pub label: usize,
}

/// Index of samples with class names and the default split parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Geometry ranges for one synthetic class, in units of the image side.
/// Mouth curvature is positive when the mouth corners turn up.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGeometry {
    pub name: String,
    pub mouth_curve: (f64, f64),
    pub eye_open: (f64, f64),
    pub mouth_open: (f64, f64),
    pub brow_raise: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFaceParams {
    pub samples_per_class: usize,
    pub image_size: usize,
    pub noise_level: f64,
    pub classes: Vec<ClassGeometry>,
}

impl Default for SyntheticFaceParams {
    fn default() -> Self {
        SyntheticFaceParams {
            samples_per_class: 250,
            image_size: 64,
            noise_level: 0.04,
            classes: vec![
                ClassGeometry {
                    name: "neutral".into(),
                    mouth_curve: (-0.04, 0.04),
                    eye_open: (0.040, 0.055),
                    mouth_open: (0.0, 0.006),
                    brow_raise: (0.10, 0.12),
                },
                ClassGeometry {
                    name: "smile".into(),
                    mouth_curve: (0.28, 0.48),
                    eye_open: (0.040, 0.055),
                    mouth_open: (0.0, 0.006),
                    brow_raise: (0.10, 0.12),
                },
                ClassGeometry {
                    name: "frown".into(),
                    mouth_curve: (-0.48, -0.28),
                    eye_open: (0.040, 0.055),
                    mouth_open: (0.0, 0.006),
                    brow_raise: (0.10, 0.12),
                },
                ClassGeometry {
                    name: "surprise".into(),
                    mouth_curve: (-0.03, 0.03),
                    eye_open: (0.075, 0.095),
                    mouth_open: (0.06, 0.10),
                    brow_raise: (0.14, 0.17),
                },
            ],
        }
    }
}

impl SyntheticFaceParams {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.samples_per_class == 0 || self.image_size < 16 {
            return Err(Error::InvalidConfig(
                "samples_per_class must be positive and image_size >= 16".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::InvalidConfig("noise level must be in [0, 0.5]".into()));
        }
        // classes must differ in at least one geometry range
        let disjoint = |a: (f64, f64), b: (f64, f64)| a.1 < b.0 || b.1 < a.0;
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                let (a, b) = (&self.classes[i], &self.classes[j]);
                let differs = disjoint(a.mouth_curve, b.mouth_curve)
                    || disjoint(a.eye_open, b.eye_open)
                    || disjoint(a.mouth_open, b.mouth_open)
                    || disjoint(a.brow_raise, b.brow_raise);
                if !differs {
                    return Err(Error::InvalidConfig(format!(
                        "classes {:?} and {:?} have fully overlapping geometry",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An in-memory sample: image in [0,1], landmarks in the 100×100 frame.
#[derive(Debug, Clone)]
pub struct Sample<T: Scalar> {
    pub id: String,
    pub image: Tensor<T>,
    pub landmarks: LandmarkSet,
    pub label: usize,
}

struct FaceSketch {
    gray: Vec<f64>,
    size: usize,
}

impl FaceSketch {
    fn new(size: usize) -> Self {
        FaceSketch {
            gray: vec![0.15; size * size],
            size,
        }
    }

    /// Soft-edged filled ellipse; `value` replaces the pixel proportionally
    /// to coverage.
    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, value: f64) {
        let s = self.size;
        let x0 = ((cx - rx - 1.0).floor().max(0.0)) as usize;
        let x1 = ((cx + rx + 1.0).ceil().min(s as f64 - 1.0)) as usize;
        let y0 = ((cy - ry - 1.0).floor().max(0.0)) as usize;
        let y1 = ((cy + ry + 1.0).ceil().min(s as f64 - 1.0)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let d = (dx * dx + dy * dy).sqrt();
                // ~1px soft edge in the ellipse's own metric
                let edge = 1.0 / rx.min(ry);
                let alpha = ((1.0 - d) / edge + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let px = &mut self.gray[y * s + x];
                    *px = *px * (1.0 - alpha) + value * alpha;
                }
            }
        }
    }

    /// Mouth arc: a parabola through the two corners with the center
    /// offset by `arc` (positive = center below corners = upturned
    /// corners), drawn with the given stroke thickness.
    fn mouth_arc(&mut self, cx: f64, cy: f64, half_w: f64, arc: f64, thick: f64, value: f64) {
        let s = self.size;
        let span = (arc.abs() + thick + 1.0).ceil();
        let x0 = ((cx - half_w - 1.0).floor().max(0.0)) as usize;
        let x1 = ((cx + half_w + 1.0).ceil().min(s as f64 - 1.0)) as usize;
        let y0 = ((cy - span).floor().max(0.0)) as usize;
        let y1 = ((cy + span).ceil().min(s as f64 - 1.0)) as usize;
        for x in x0..=x1 {
            let t = (x as f64 - cx) / half_w;
            if t.abs() > 1.0 {
                continue;
            }
            let path_y = cy + arc * (1.0 - t * t);
            for y in y0..=y1 {
                let d = (y as f64 - path_y).abs();
                let alpha = ((thick - d) + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let px = &mut self.gray[y * s + x];
                    *px = *px * (1.0 - alpha) + value * alpha;
                }
            }
        }
    }
}

struct FaceGeometry {
    eye_left: (f64, f64),
    eye_right: (f64, f64),
    eye_rx: f64,
    eye_ry: f64,
    brow_y: f64,
    brow_half_w: f64,
    mouth: (f64, f64),
    mouth_half_w: f64,
    mouth_arc: f64,
    mouth_open: f64,
    face_center: (f64, f64),
    face_rx: f64,
    face_ry: f64,
}

fn sample_geometry(class: &ClassGeometry, size: f64, rng: &mut Prng) -> FaceGeometry {
    let u = |rng: &mut Prng, lo: f64, hi: f64| {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };
    let cx = size * u(rng, 0.46, 0.54);
    let cy = size * u(rng, 0.48, 0.56);
    let face_rx = size * u(rng, 0.36, 0.42);
    let face_ry = size * u(rng, 0.40, 0.46);
    let eye_dx = size * u(rng, 0.14, 0.18);
    let eye_y = cy - size * u(rng, 0.08, 0.12);
    let eye_rx = size * u(rng, 0.05, 0.065);
    let eye_ry = size * u(rng, class.eye_open.0, class.eye_open.1);
    let brow_y = eye_y - size * u(rng, class.brow_raise.0, class.brow_raise.1);
    let brow_half_w = size * u(rng, 0.06, 0.08);
    let mouth_y = cy + size * u(rng, 0.20, 0.26);
    let mouth_half_w = size * u(rng, 0.12, 0.16);
    let mouth_arc = mouth_half_w * u(rng, class.mouth_curve.0, class.mouth_curve.1);
    let mouth_open = size * u(rng, class.mouth_open.0, class.mouth_open.1);
    FaceGeometry {
        eye_left: (cx - eye_dx, eye_y),
        eye_right: (cx + eye_dx, eye_y),
        eye_rx,
        eye_ry,
        brow_y,
        brow_half_w,
        mouth: (cx, mouth_y),
        mouth_half_w,
        mouth_arc,
        mouth_open,
        face_center: (cx, cy),
        face_rx,
        face_ry,
    }
}

/// The 13-landmark layout shared with the attention module's default AU
/// rules: eye corners (0–3), eye centers (4–5), brow ends (6–9), mouth
/// corners (10–11), mouth center (12).
fn landmarks_of(geo: &FaceGeometry) -> RawLandmarks {
    let (lx, ly) = geo.eye_left;
    let (rx, ry) = geo.eye_right;
    let (mx, my) = geo.mouth;
    let points = vec![
        (lx + geo.eye_rx, ly),               // 0 left inner corner
        (lx - geo.eye_rx, ly),               // 1 left outer corner
        (rx - geo.eye_rx, ry),               // 2 right inner corner
        (rx + geo.eye_rx, ry),               // 3 right outer corner
        (lx, ly),                            // 4 left eye center
        (rx, ry),                            // 5 right eye center
        (lx + geo.brow_half_w, geo.brow_y),  // 6 left brow inner
        (lx - geo.brow_half_w, geo.brow_y),  // 7 left brow outer
        (rx - geo.brow_half_w, geo.brow_y),  // 8 right brow inner
        (rx + geo.brow_half_w, geo.brow_y),  // 9 right brow outer
        (mx - geo.mouth_half_w, my),         // 10 mouth left corner
        (mx + geo.mouth_half_w, my),         // 11 mouth right corner
        (mx, my + geo.mouth_arc),            // 12 mouth center
    ];
    RawLandmarks {
        points,
        inner_left: 0,
        inner_right: 2,
    }
}

fn render_face(geo: &FaceGeometry, size: usize) -> Vec<f64> {
    let mut sketch = FaceSketch::new(size);
    let (cx, cy) = geo.face_center;
    sketch.ellipse(cx, cy, geo.face_rx, geo.face_ry, 0.85);
    for &(ex, ey) in &[geo.eye_left, geo.eye_right] {
        sketch.ellipse(ex, ey, geo.eye_rx, geo.eye_ry, 0.2);
        // brows as flat thin ellipses above the eyes
        sketch.ellipse(ex, geo.brow_y, geo.brow_half_w, size as f64 * 0.012, 0.25);
    }
    let (mx, my) = geo.mouth;
    sketch.mouth_arc(
        mx,
        my,
        geo.mouth_half_w,
        geo.mouth_arc,
        size as f64 * 0.014,
        0.2,
    );
    if geo.mouth_open > 0.5 {
        sketch.ellipse(mx, my + geo.mouth_arc, geo.mouth_half_w * 0.55, geo.mouth_open, 0.3);
    }
    sketch.gray
}

fn encode_png(gray: &[f64], size: usize, path: &Path) -> Result<()> {
    let mut rgb = Vec::with_capacity(size * size * 3);
    for &v in gray {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[byte, byte, byte]);
    }
    let img = image::RgbImage::from_raw(size as u32, size as u32, rgb).expect("raster size");
    img.save(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("png encode failed: {e}"),
    })
}

/// Renders the dataset under `out_dir` (`images/`, `landmarks/`,
/// `manifest.txt`) and returns the manifest. Fully deterministic per
/// (params, seed).
pub fn generate_synthetic_dataset(
    params: &SyntheticFaceParams,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    params.validate()?;
    let images_dir = out_dir.join("images");
    let landmarks_dir = out_dir.join("landmarks");
    for dir in [out_dir, &images_dir, &landmarks_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let size = params.image_size;
    let mut records = Vec::with_capacity(params.class_count() * params.samples_per_class);
    let mut stream = rng::substream(seed, 0xDA7A);
    for (label, class) in params.classes.iter().enumerate() {
        for s in 0..params.samples_per_class {
            let id = format!("c{label}_s{s:04}");
            let geo = sample_geometry(class, size as f64, &mut stream);
            let mut gray = render_face(&geo, size);
            if params.noise_level > 0.0 {
                for px in gray.iter_mut() {
                    *px = (*px + stream.gen_range(-params.noise_level..params.noise_level))
                        .clamp(0.0, 1.0);
                }
            }
            let image_rel = format!("images/{id}.png");
            let landmark_rel = format!("landmarks/{id}.txt");
            encode_png(&gray, size, &out_dir.join(&image_rel))?;
            let raw = landmarks_of(&geo);
            std::fs::write(
                out_dir.join(&landmark_rel),
                attention::format_landmarks(&raw),
            )
            .map_err(|e| Error::io(landmark_rel.clone(), e))?;
            records.push(ManifestRecord {
                id,
                image_path: image_rel,
                landmark_path: landmark_rel,
                label,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        class_names: params.classes.iter().map(|c| c.name.clone()).collect(),
        records,
        split_seed: seed,
        train_fraction: 0.8,
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

/// Serializes `manifest.txt` under the manifest root.
pub fn write_manifest(manifest: &DatasetManifest) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "# e2caps manifest v1 classes={} seed={} train_fraction={}",
        manifest.class_names.join(","),
        manifest.split_seed,
        manifest.train_fraction
    );
    let _ = writeln!(text, "id,image_path,landmark_path,label");
    for r in &manifest.records {
        let _ = writeln!(text, "{},{},{},{}", r.id, r.image_path, r.landmark_path, r.label);
    }
    let path = manifest.root.join("manifest.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let perr = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| perr("empty manifest".into()))?;
    if !header.starts_with("# e2caps manifest v1") {
        return Err(perr(format!("bad header {header:?}")));
    }
    let mut class_names = Vec::new();
    let mut split_seed = 0u64;
    let mut train_fraction = 0.8f64;
    for field in header.split_whitespace() {
        if let Some((k, v)) = field.split_once('=') {
            match k {
                "classes" => class_names = v.split(',').map(str::to_string).collect(),
                "seed" => {
                    split_seed = v.parse().map_err(|_| perr(format!("bad seed {v:?}")))?
                }
                "train_fraction" => {
                    train_fraction =
                        v.parse().map_err(|_| perr(format!("bad fraction {v:?}")))?
                }
                _ => {}
            }
        }
    }
    if class_names.is_empty() {
        return Err(perr("header names no classes".into()));
    }
    let column_line = lines.next().ok_or_else(|| perr("missing column line".into()))?;
    if column_line != "id,image_path,landmark_path,label" {
        return Err(perr(format!("bad column line {column_line:?}")));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(perr(format!("bad record {line:?}")));
        }
        let label: usize = parts[3]
            .parse()
            .map_err(|_| perr(format!("bad label in {line:?}")))?;
        if label >= class_names.len() {
            return Err(perr(format!("label {label} out of range in {line:?}")));
        }
        let record = ManifestRecord {
            id: parts[0].to_string(),
            image_path: parts[1].to_string(),
            landmark_path: parts[2].to_string(),
            label,
        };
        for rel in [&record.image_path, &record.landmark_path] {
            if !root.join(rel).exists() {
                return Err(perr(format!("missing file {rel} for record {}", record.id)));
            }
        }
        records.push(record);
    }
    Ok(DatasetManifest {
        root,
        class_names,
        records,
        split_seed,
        train_fraction,
    })
}

/// Deterministic train/test record indices, stratified by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut indices) in by_class {
        if indices.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {label} has {} sample(s); need at least 2 to split",
                indices.len()
            )));
        }
        let mut stream = rng::substream(seed, 0x5917 ^ label as u64);
        rng::shuffle(&mut indices, &mut stream);
        let take = ((train_fraction * indices.len() as f64).round() as usize)
            .clamp(1, indices.len() - 1);
        train.extend_from_slice(&indices[..take]);
        test.extend_from_slice(&indices[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Loads one record: image decoded and bilinearly scaled to
/// `model_input_size` with values in [0,1], landmarks normalized into the
/// 100×100 frame using the source image dimensions.
pub fn load_sample<T: Scalar>(
    manifest: &DatasetManifest,
    index: usize,
    model_input_size: usize,
) -> Result<Sample<T>> {
    let record = manifest
        .records
        .get(index)
        .ok_or_else(|| Error::InvalidInput(format!("record index {index} out of range")))?;
    let img_path = manifest.root.join(&record.image_path);
    let img = image::open(&img_path)
        .map_err(|e| Error::Format {
            path: img_path.display().to_string(),
            msg: format!("cannot decode image for record {}: {e}", record.id),
        })?
        .to_rgb8();
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let mut planes: Vec<Vec<T>> = vec![Vec::with_capacity(sw * sh); 3];
    for px in img.pixels() {
        for c in 0..3 {
            planes[c].push(T::of(px.0[c] as f64 / 255.0));
        }
    }
    let s = model_input_size;
    let mut data = Vec::with_capacity(3 * s * s);
    for plane in &planes {
        if sw == s && sh == s {
            data.extend_from_slice(plane);
        } else {
            data.extend(bilinear_plane(plane, sh, sw, s, s));
        }
    }
    let image = Tensor::from_vec(&[3, s, s], data)?;

    let lm_path = manifest.root.join(&record.landmark_path);
    let raw = attention::read_landmark_file(&lm_path).map_err(|e| match e {
        Error::Io { path, source } => Error::Io { path, source },
        other => Error::Parse {
            path: lm_path.display().to_string(),
            msg: format!("landmarks for record {}: {other}", record.id),
        },
    })?;
    let landmarks = attention::normalize_landmarks(&raw, sw, sh)?;
    Ok(Sample {
        id: record.id.clone(),
        image,
        landmarks,
        label: record.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{compute_au_centers, default_au_rules, render_attention_map};

    fn small_params() -> SyntheticFaceParams {
        SyntheticFaceParams {
            samples_per_class: 6,
            image_size: 48,
            ..Default::default()
        }
    }

    #[test]
    fn default_params_validate() {
        SyntheticFaceParams::default().validate().unwrap();
    }

    #[test]
    fn overlapping_classes_rejected() {
        let mut p = SyntheticFaceParams::default();
        p.classes[1] = p.classes[0].clone();
        p.classes[1].name = "copy".into();
        assert!(p.validate().is_err());
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let params = small_params();
        generate_synthetic_dataset(&params, 7, dir_a.path()).unwrap();
        generate_synthetic_dataset(&params, 7, dir_b.path()).unwrap();
        for sub in ["manifest.txt", "images/c1_s0003.png", "landmarks/c2_s0000.txt"] {
            let a = std::fs::read(dir_a.path().join(sub)).unwrap();
            let b = std::fs::read(dir_b.path().join(sub)).unwrap();
            assert_eq!(a, b, "{sub} differs between identical runs");
        }
    }

    #[test]
    fn manifest_counts_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let manifest = generate_synthetic_dataset(&params, 3, dir.path()).unwrap();
        assert_eq!(manifest.len(), 4 * 6);
        assert_eq!(manifest.class_names.len(), 4);
        let back = read_manifest(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(back.records, manifest.records);
        assert_eq!(back.class_names, manifest.class_names);
    }

    #[test]
    fn missing_file_detected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(&small_params(), 3, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(&manifest.records[5].image_path)).unwrap();
        let err = read_manifest(&dir.path().join("manifest.txt")).unwrap_err();
        assert!(err.to_string().contains(&manifest.records[5].id));
    }

    #[test]
    fn split_is_stratified_disjoint_exhaustive() {
        let dir = tempfile::tempdir().unwrap();
        let params = SyntheticFaceParams {
            samples_per_class: 10,
            image_size: 32,
            ..Default::default()
        };
        let manifest = generate_synthetic_dataset(&params, 0, dir.path()).unwrap();
        let s = split(&manifest, 0.8, 11).unwrap();
        assert_eq!(s.train.len(), 32);
        assert_eq!(s.test.len(), 8);
        // per-class proportions
        for label in 0..4 {
            let in_train = s
                .train
                .iter()
                .filter(|&&i| manifest.records[i].label == label)
                .count();
            assert_eq!(in_train, 8, "class {label} not stratified");
        }
        // disjoint and exhaustive
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..manifest.len()).collect::<Vec<_>>());
        // determinism & seed sensitivity
        assert_eq!(split(&manifest, 0.8, 11).unwrap(), s);
        assert_ne!(split(&manifest, 0.8, 12).unwrap(), s);
    }

    #[test]
    fn split_rejects_degenerate_classes_and_fractions() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = generate_synthetic_dataset(&small_params(), 1, dir.path()).unwrap();
        assert!(split(&manifest, 0.0, 0).is_err());
        assert!(split(&manifest, 1.0, 0).is_err());
        manifest.records.retain(|r| r.label != 0 || r.id.ends_with("0000"));
        assert!(split(&manifest, 0.8, 0).is_err());
    }

    #[test]
    fn load_sample_round_trips_landmarks_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params(); // 48×48 source
        let manifest = generate_synthetic_dataset(&params, 5, dir.path()).unwrap();
        let sample: Sample<f64> = load_sample(&manifest, 0, 48).unwrap();
        assert_eq!(sample.image.shape(), &[3, 48, 48]);
        assert!(sample
            .image
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        // landmarks re-normalize to the stored values
        let raw = attention::read_landmark_file(
            &dir.path().join(&manifest.records[0].landmark_path),
        )
        .unwrap();
        let expect = attention::normalize_landmarks(&raw, 48, 48).unwrap();
        assert_eq!(sample.landmarks, expect);

        // downscaled load produces the model-size image
        let small: Sample<f32> = load_sample(&manifest, 0, 32).unwrap();
        assert_eq!(small.image.shape(), &[3, 32, 32]);
    }

    #[test]
    fn white_pixel_loads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([255, 255, 255]));
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("landmarks")).unwrap();
        img.save(dir.path().join("images/w.png")).unwrap();
        let raw = RawLandmarks {
            points: vec![(1.0, 1.0), (3.0, 1.0)],
            inner_left: 0,
            inner_right: 1,
        };
        std::fs::write(
            dir.path().join("landmarks/w.txt"),
            attention::format_landmarks(&raw),
        )
        .unwrap();
        let manifest = DatasetManifest {
            root: dir.path().to_path_buf(),
            class_names: vec!["a".into(), "b".into()],
            records: vec![ManifestRecord {
                id: "w".into(),
                image_path: "images/w.png".into(),
                landmark_path: "landmarks/w.txt".into(),
                label: 0,
            }],
            split_seed: 0,
            train_fraction: 0.8,
        };
        let sample: Sample<f32> = load_sample(&manifest, 0, 4).unwrap();
        assert!(sample.image.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generated_landmarks_yield_nonempty_attention_maps() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic_dataset(&small_params(), 9, dir.path()).unwrap();
        let rules = default_au_rules();
        for i in 0..manifest.len() {
            let sample: Sample<f32> = load_sample(&manifest, i, 32).unwrap();
            let centers = compute_au_centers(&sample.landmarks, &rules).unwrap();
            assert!(
                !centers.centers.is_empty(),
                "sample {} produced no AU centers",
                manifest.records[i].id
            );
            let map = render_attention_map(&centers.centers).unwrap();
            assert!(map.grid().iter().any(|&v| v > 0.0));
        }
    }
}
