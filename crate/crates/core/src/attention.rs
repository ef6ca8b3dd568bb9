//! AU-aware attention maps from facial landmarks.
//!
//! Landmarks live in a 100×100 reference frame. Action-unit centers are
//! derived from them by shifting along offsets scaled by the inner-eye
//! corner distance (or by using a landmark directly). Each center spreads
//! weight `max(0, 1 − 0.07·d_m)` over its 15×15 neighborhood, `d_m` being
//! the Manhattan distance; overlapping areas combine by per-pixel maximum.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interp::bilinear_plane;
use crate::tensor::{Scalar, Tensor};

/// Side length of the landmark/attention reference frame.
pub const MAP_SIZE: usize = 100;
/// Chebyshev radius of an AU area: "the nearby 7 pixels" give a 15×15 window.
pub const AU_RADIUS: i64 = 7;
/// Weight decay per unit of Manhattan distance.
pub const WEIGHT_SLOPE: f64 = 0.07;

/// Landmarks in the 100×100 frame with named inner-eye-corner indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
    inner_left: usize,
    inner_right: usize,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>, inner_left: usize, inner_right: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty landmark list".into()));
        }
        if inner_left >= points.len() || inner_right >= points.len() {
            return Err(Error::InvalidInput(format!(
                "inner-corner indices ({inner_left}, {inner_right}) out of range for {} landmarks",
                points.len()
            )));
        }
        for &(x, y) in &points {
            if !(0.0..100.0).contains(&x) || !(0.0..100.0).contains(&y) {
                return Err(Error::InvalidInput(format!(
                    "landmark ({x}, {y}) outside the {MAP_SIZE}x{MAP_SIZE} frame"
                )));
            }
        }
        Ok(LandmarkSet {
            points,
            inner_left,
            inner_right,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn inner_left(&self) -> usize {
        self.inner_left
    }

    pub fn inner_right(&self) -> usize {
        self.inner_right
    }

    /// Euclidean distance between the inner eye corners, the scale unit
    /// for AU-center shifts.
    pub fn inner_corner_distance(&self) -> f64 {
        let (lx, ly) = self.points[self.inner_left];
        let (rx, ry) = self.points[self.inner_right];
        ((lx - rx).powi(2) + (ly - ry).powi(2)).sqrt()
    }
}

/// Raw landmarks as read from a file, in source-image pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLandmarks {
    pub points: Vec<(f64, f64)>,
    pub inner_left: usize,
    pub inner_right: usize,
}

/// Scales raw landmarks into the 100×100 frame. Coordinates that land
/// outside after scaling are clamped into [0, 99].
pub fn normalize_landmarks(
    raw: &RawLandmarks,
    source_width: usize,
    source_height: usize,
) -> Result<LandmarkSet> {
    if source_width == 0 || source_height == 0 {
        return Err(Error::InvalidInput("source dimensions must be positive".into()));
    }
    if raw.points.is_empty() {
        return Err(Error::InvalidInput("empty landmark list".into()));
    }
    let sx = MAP_SIZE as f64 / source_width as f64;
    let sy = MAP_SIZE as f64 / source_height as f64;
    let points = raw
        .points
        .iter()
        .map(|&(x, y)| ((x * sx).clamp(0.0, 99.0), ((y * sy).clamp(0.0, 99.0))))
        .collect();
    LandmarkSet::new(points, raw.inner_left, raw.inner_right)
}

/// One AU-center construction rule: take a base landmark and either use it
/// directly or shift it by an offset expressed in inner-corner distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuRule {
    pub base: usize,
    /// `None` uses the landmark directly.
    pub shift: Option<(f64, f64)>,
}

impl AuRule {
    pub fn direct(base: usize) -> Self {
        AuRule { base, shift: None }
    }

    pub fn shifted(base: usize, dx: f64, dy: f64) -> Self {
        AuRule {
            base,
            shift: Some((dx, dy)),
        }
    }
}

/// The shipped rule table for the 13-point landmark layout of the data
/// module (eye corners/centers, brow ends, mouth corners and center).
/// Brow and mouth landmarks anchor their AU areas directly; lid, cheek,
/// lip and chin regions are reached by vertical shifts.
pub fn default_au_rules() -> Vec<AuRule> {
    vec![
        AuRule::direct(6),                 // inner brow, left
        AuRule::direct(8),                 // inner brow, right
        AuRule::direct(7),                 // outer brow, left
        AuRule::direct(9),                 // outer brow, right
        AuRule::shifted(6, 0.0, -0.25),    // brow lowerer region, left
        AuRule::shifted(8, 0.0, -0.25),    // brow lowerer region, right
        AuRule::shifted(4, 0.0, 0.5),      // cheek raiser, left
        AuRule::shifted(5, 0.0, 0.5),      // cheek raiser, right
        AuRule::shifted(4, 0.0, -0.3),     // upper lid, left
        AuRule::shifted(5, 0.0, -0.3),     // upper lid, right
        AuRule::direct(10),                // lip corner, left
        AuRule::direct(11),                // lip corner, right
        AuRule::shifted(12, 0.0, -0.3),    // upper lip raiser
        AuRule::shifted(12, 0.0, 0.35),    // chin raiser
        AuRule::direct(12),                // lips part
        AuRule::shifted(12, 0.0, -0.6),    // nose root region
    ]
}

/// AU centers plus a record of rules whose centers fell outside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AuCenters {
    pub centers: Vec<(usize, usize)>,
    /// (rule index, rounded out-of-bounds coordinates)
    pub dropped: Vec<(usize, (i64, i64))>,
}

/// Applies the rule table: `center = base + shift · inner_corner_distance`,
/// rounded to the nearest pixel. Out-of-bounds centers are dropped and
/// recorded rather than clamped.
pub fn compute_au_centers(landmarks: &LandmarkSet, rules: &[AuRule]) -> Result<AuCenters> {
    let scale = landmarks.inner_corner_distance();
    if scale <= 0.0 {
        return Err(Error::InvalidInput(
            "coincident inner eye corners: shift scale undefined".into(),
        ));
    }
    let mut centers = Vec::with_capacity(rules.len());
    let mut dropped = Vec::new();
    for (ri, rule) in rules.iter().enumerate() {
        let (bx, by) = *landmarks.points().get(rule.base).ok_or_else(|| {
            Error::InvalidInput(format!(
                "rule {ri} base index {} out of range for {} landmarks",
                rule.base,
                landmarks.points().len()
            ))
        })?;
        let (dx, dy) = rule.shift.unwrap_or((0.0, 0.0));
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::InvalidInput(format!("rule {ri} offset not finite")));
        }
        let cx = (bx + dx * scale).round() as i64;
        let cy = (by + dy * scale).round() as i64;
        if (0..MAP_SIZE as i64).contains(&cx) && (0..MAP_SIZE as i64).contains(&cy) {
            centers.push((cx as usize, cy as usize));
        } else {
            dropped.push((ri, (cx, cy)));
        }
    }
    Ok(AuCenters { centers, dropped })
}

/// The 100×100 AU-activity weight grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    grid: Vec<f64>,
    centers: Vec<(usize, usize)>,
}

impl AttentionMap {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.grid[y * MAP_SIZE + x]
    }

    /// The AU centers this map was rendered from.
    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    /// Bilinear resize to a feature-map resolution, returned as a
    /// single-channel tensor. Values stay in [0, 1].
    pub fn resize<T: Scalar>(&self, target_height: usize, target_width: usize) -> Tensor<T> {
        assert!(target_height > 0 && target_width > 0, "target dims positive");
        let src: Vec<T> = self.grid.iter().map(|&v| T::of(v)).collect();
        let data = bilinear_plane(&src, MAP_SIZE, MAP_SIZE, target_height, target_width);
        Tensor::from_vec(&[target_height, target_width], data).expect("resize shape")
    }

    /// 8-bit grayscale raster (`round(255·w)`) for visual inspection.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        self.grid
            .iter()
            .map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(MAP_SIZE as u32, MAP_SIZE as u32, self.to_gray_bytes())
            .expect("attention raster size");
        img.save(path)
            .map_err(|e| Error::Format {
                path: path.display().to_string(),
                msg: format!("png encode failed: {e}"),
            })
    }
}

/// Renders the attention map for a set of in-bounds AU centers. An empty
/// center list yields the all-zero map.
pub fn render_attention_map(centers: &[(usize, usize)]) -> Result<AttentionMap> {
    for &(cx, cy) in centers {
        if cx >= MAP_SIZE || cy >= MAP_SIZE {
            return Err(Error::InvalidInput(format!(
                "AU center ({cx}, {cy}) outside the {MAP_SIZE}x{MAP_SIZE} grid"
            )));
        }
    }
    let mut grid = vec![0.0f64; MAP_SIZE * MAP_SIZE];
    for &(cx, cy) in centers {
        for dy in -AU_RADIUS..=AU_RADIUS {
            let y = cy as i64 + dy;
            if !(0..MAP_SIZE as i64).contains(&y) {
                continue;
            }
            for dx in -AU_RADIUS..=AU_RADIUS {
                let x = cx as i64 + dx;
                if !(0..MAP_SIZE as i64).contains(&x) {
                    continue;
                }
                let manhattan = (dx.abs() + dy.abs()) as f64;
                let w = (1.0 - WEIGHT_SLOPE * manhattan).max(0.0);
                let slot = &mut grid[y as usize * MAP_SIZE + x as usize];
                if w > *slot {
                    *slot = w;
                }
            }
        }
    }
    Ok(AttentionMap {
        grid,
        centers: centers.to_vec(),
    })
}

/// Parses the landmark text format:
/// `# landmarks v1 n=<count> inner_left=<i> inner_right=<j>` followed by
/// one `x,y` line per landmark.
pub fn parse_landmarks(content: &str, path: &str) -> Result<RawLandmarks> {
    let perr = |msg: String| Error::Parse {
        path: path.to_string(),
        msg,
    };
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| perr("empty landmark file".into()))?;
    if !header.starts_with("# landmarks v1") {
        return Err(perr(format!("bad header: {header:?}")));
    }
    let mut n = None;
    let mut inner_left = None;
    let mut inner_right = None;
    for field in header.split_whitespace() {
        if let Some((k, v)) = field.split_once('=') {
            let parsed: usize = v
                .parse()
                .map_err(|_| perr(format!("bad header field {field:?}")))?;
            match k {
                "n" => n = Some(parsed),
                "inner_left" => inner_left = Some(parsed),
                "inner_right" => inner_right = Some(parsed),
                _ => {}
            }
        }
    }
    let (n, inner_left, inner_right) = match (n, inner_left, inner_right) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr("header missing n/inner_left/inner_right".into())),
    };
    let mut points = Vec::with_capacity(n);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (xs, ys) = line
            .split_once(',')
            .ok_or_else(|| perr(format!("bad landmark line {line:?}")))?;
        let x: f64 = xs
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad x in {line:?}")))?;
        let y: f64 = ys
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad y in {line:?}")))?;
        points.push((x, y));
    }
    if points.len() != n {
        return Err(perr(format!("header says n={n}, found {} points", points.len())));
    }
    Ok(RawLandmarks {
        points,
        inner_left,
        inner_right,
    })
}

pub fn read_landmark_file(path: &Path) -> Result<RawLandmarks> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_landmarks(&content, &path.display().to_string())
}

/// Serializes landmarks in the format `parse_landmarks` reads.
pub fn format_landmarks(raw: &RawLandmarks) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# landmarks v1 n={} inner_left={} inner_right={}",
        raw.points.len(),
        raw.inner_left,
        raw.inner_right
    );
    for &(x, y) in &raw.points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Parses the AU rule text format: one rule per line as
/// `base,dx,dy`, or a bare `base` for direct use. `#` lines are comments.
pub fn parse_au_rules(content: &str, path: &str) -> Result<Vec<AuRule>> {
    let perr = |msg: String| Error::Parse {
        path: path.to_string(),
        msg,
    };
    let mut rules = Vec::new();
    for line in content.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let base: usize = fields[0]
            .parse()
            .map_err(|_| perr(format!("bad base index in {line:?}")))?;
        match fields.len() {
            1 => rules.push(AuRule::direct(base)),
            3 => {
                let dx: f64 = fields[1]
                    .parse()
                    .map_err(|_| perr(format!("bad dx in {line:?}")))?;
                let dy: f64 = fields[2]
                    .parse()
                    .map_err(|_| perr(format!("bad dy in {line:?}")))?;
                rules.push(AuRule::shifted(base, dx, dy));
            }
            _ => return Err(perr(format!("expected `base` or `base,dx,dy`: {line:?}"))),
        }
    }
    if rules.is_empty() {
        return Err(perr("no rules in file".into()));
    }
    Ok(rules)
}

pub fn read_au_rules(path: &Path) -> Result<Vec<AuRule>> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_au_rules(&content, &path.display().to_string())
}
