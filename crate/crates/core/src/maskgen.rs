//! Geometric mask rasterization and alpha compositing.
//!
//! A mask is a grid of concentric outline shapes. Density controls both the
//! grid size (`ceil(density / 10)` cells per row and column) and the nesting
//! depth (`1 + density / 34` rings). Rings sit evenly between 30% and 95% of
//! the half-cell extent. `Knit` is a diamond grid whose odd rows are shifted
//! by half a cell, with rings stretched to 120% of the half-cell so that
//! neighbouring shapes cross. Coverage is boolean; strokes are
//! `max(1, round(min(w, h) / 128))` pixels wide.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{resize_to, CorpusManifest};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::jsonl;

/// Condition id reserved for unmasked images.
pub const CLEAN: &str = "clean";

const RING_INNER: f64 = 0.30;
const RING_OUTER: f64 = 0.95;
const KNIT_OUTER: f64 = 1.20;
const JITTER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    Circle,
    Diamond,
    Square,
    Knit,
}

impl MaskShape {
    pub const ALL: [MaskShape; 4] = [
        MaskShape::Circle,
        MaskShape::Diamond,
        MaskShape::Square,
        MaskShape::Knit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskShape::Circle => "circle",
            MaskShape::Diamond => "diamond",
            MaskShape::Square => "square",
            MaskShape::Knit => "knit",
        }
    }
}

impl fmt::Display for MaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskShape::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Range(format!("unknown mask shape {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskSpec {
    pub shape: MaskShape,
    /// 0..=100.
    pub density: u32,
    /// 0..=255; percent form is `opacity_alpha / 255`.
    pub opacity_alpha: u32,
    pub color: [u8; 3],
    pub seed: u64,
    /// Per-shape seeded offset of up to 5% of the cell size.
    #[serde(default)]
    pub jitter: bool,
}

impl MaskSpec {
    pub fn new(shape: MaskShape, density: u32, opacity_alpha: u32) -> Self {
        Self {
            shape,
            density,
            opacity_alpha,
            color: [0, 0, 0],
            seed: 0,
            jitter: false,
        }
    }

    pub fn with_color(mut self, color: [u8; 3]) -> Self {
        self.color = color;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_jitter(mut self, jitter: bool) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.density > 100 {
            return Err(Error::Range(format!("density {} outside 0..=100", self.density)));
        }
        if self.opacity_alpha > 255 {
            return Err(Error::Range(format!(
                "opacity_alpha {} outside 0..=255",
                self.opacity_alpha
            )));
        }
        Ok(())
    }

    pub fn cells_per_row(&self) -> u32 {
        self.density.div_ceil(10)
    }

    pub fn rings(&self) -> u32 {
        1 + self.density / 34
    }

    /// Ring extents as fractions of the half-cell, innermost first.
    fn ring_fractions(&self) -> Vec<f64> {
        let r = self.rings();
        let outer = if self.shape == MaskShape::Knit { KNIT_OUTER } else { RING_OUTER };
        let inner = RING_INNER * outer / RING_OUTER;
        if r == 1 {
            return vec![outer];
        }
        (0..r)
            .map(|k| inner + (outer - inner) * k as f64 / (r - 1) as f64)
            .collect()
    }

    pub fn condition(&self) -> ConditionKey {
        ConditionKey {
            shape: self.shape,
            density: self.density,
            opacity_alpha: self.opacity_alpha,
            seed: self.seed,
            jitter: self.jitter,
        }
    }
}

/// Boolean per-pixel coverage of a mask's geometry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskLayer {
    width: u32,
    height: u32,
    coverage: Vec<bool>,
}

impl MaskLayer {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            coverage: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_coverage(width: u32, height: u32, coverage: Vec<bool>) -> Result<Self> {
        if coverage.len() != width as usize * height as usize {
            return Err(Error::Range(format!(
                "coverage holds {} cells, expected {}x{}",
                coverage.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            coverage,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_covered(&self, x: u32, y: u32) -> bool {
        self.coverage[y as usize * self.width as usize + x as usize]
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Packs coverage into bytes, 8 pixels per byte, row-major.
    pub fn to_bits(&self) -> Vec<u8> {
        self.coverage
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)))
            .collect()
    }
}

pub fn coverage_fraction(layer: &MaskLayer) -> f64 {
    if layer.coverage.is_empty() {
        return 0.0;
    }
    layer.covered_count() as f64 / layer.coverage.len() as f64
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Rasterizes the mask geometry at `w x h`. Opacity and color are ignored.
pub fn rasterize(spec: &MaskSpec, w: u32, h: u32) -> Result<MaskLayer> {
    spec.validate()?;
    if w == 0 || h == 0 {
        return Err(Error::Range(format!("mask size must be at least 1x1, got {w}x{h}")));
    }
    let mut layer = MaskLayer::empty(w, h);
    let n = spec.cells_per_row();
    if n == 0 {
        return Ok(layer);
    }

    let cw = w as f64 / n as f64;
    let ch = h as f64 / n as f64;
    let half = cw.min(ch) / 2.0;
    let stroke = ((w.min(h) as f64 / 128.0).round()).max(1.0);
    // Stroke width is measured along the axes for every shape. The band is
    // half-open so a unit stroke always hits exactly one sample per crossing.
    let band = stroke / 2.0;
    let radii: Vec<f64> = spec.ring_fractions().into_iter().map(|f| f * half).collect();
    let reach = radii.iter().copied().fold(0.0, f64::max) + stroke;

    let mut rng = spec.jitter.then(|| ChaCha8Rng::seed_from_u64(spec.seed));
    for row in 0..n {
        let shifted = spec.shape == MaskShape::Knit && row % 2 == 1;
        // A shifted row needs one extra shape to cover the left edge.
        let cols: Vec<f64> = if shifted {
            (0..=n).map(|i| i as f64 * cw).collect()
        } else {
            (0..n).map(|i| (i as f64 + 0.5) * cw).collect()
        };
        let cy0 = (row as f64 + 0.5) * ch;
        for cx0 in cols {
            let (mut cx, mut cy) = (cx0, cy0);
            if let Some(rng) = rng.as_mut() {
                cx += (unit_f64(rng) * 2.0 - 1.0) * JITTER * cw;
                cy += (unit_f64(rng) * 2.0 - 1.0) * JITTER * ch;
            }
            stamp(&mut layer, spec.shape, cx, cy, &radii, band, reach);
        }
    }
    Ok(layer)
}

fn stamp(layer: &mut MaskLayer, shape: MaskShape, cx: f64, cy: f64, radii: &[f64], band: f64, reach: f64) {
    let (w, h) = (layer.width as i64, layer.height as i64);
    let x0 = ((cx - reach).floor() as i64).max(0);
    let x1 = ((cx + reach).ceil() as i64).min(w - 1);
    let y0 = ((cy - reach).floor() as i64).max(0);
    let y1 = ((cy + reach).ceil() as i64).min(h - 1);
    for py in y0..=y1 {
        let dy = (py as f64 + 0.5 - cy).abs();
        for px in x0..=x1 {
            let dx = (px as f64 + 0.5 - cx).abs();
            let dist = match shape {
                MaskShape::Circle => dx.hypot(dy),
                MaskShape::Square => dx.max(dy),
                MaskShape::Diamond | MaskShape::Knit => dx + dy,
            };
            if radii.iter().any(|r| dist >= r - band && dist < r + band) {
                layer.coverage[(py * w + px) as usize] = true;
            }
        }
    }
}

/// Blends `color` over covered pixels: `round(((255 - a) * src + a * color) / 255)`.
pub fn apply_layer(image: &RgbImage, layer: &MaskLayer, color: [u8; 3], opacity_alpha: u32) -> Result<RgbImage> {
    if opacity_alpha > 255 {
        return Err(Error::Range(format!("opacity_alpha {opacity_alpha} outside 0..=255")));
    }
    if image.dimensions() != (layer.width, layer.height) {
        return Err(Error::DimensionMismatch {
            left_w: image.width(),
            left_h: image.height(),
            right_w: layer.width,
            right_h: layer.height,
        });
    }
    let mut out = image.clone();
    if opacity_alpha == 0 {
        return Ok(out);
    }
    let a = opacity_alpha;
    for (px, &covered) in out.pixels_mut().chunks_exact_mut(3).zip(&layer.coverage) {
        if covered {
            for (v, &c) in px.iter_mut().zip(&color) {
                let num = (255 - a) * *v as u32 + a * c as u32;
                *v = ((2 * num + 255) / 510) as u8;
            }
        }
    }
    Ok(out)
}

pub fn apply_mask(image: &RgbImage, spec: &MaskSpec) -> Result<RgbImage> {
    let layer = rasterize(spec, image.width(), image.height())?;
    apply_layer(image, &layer, spec.color, spec.opacity_alpha)
}

/// The geometry-and-opacity fields encoded in a condition id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionKey {
    pub shape: MaskShape,
    pub density: u32,
    pub opacity_alpha: u32,
    pub seed: u64,
    pub jitter: bool,
}

impl ConditionKey {
    pub fn to_spec(self, color: [u8; 3]) -> MaskSpec {
        MaskSpec {
            shape: self.shape,
            density: self.density,
            opacity_alpha: self.opacity_alpha,
            color,
            seed: self.seed,
            jitter: self.jitter,
        }
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-d{}-a{}-s{}",
            self.shape, self.density, self.opacity_alpha, self.seed
        )?;
        if self.jitter {
            f.write_str("-j")?;
        }
        Ok(())
    }
}

/// `"<shape>-d<density>-a<alpha>-s<seed>"`, with a `-j` suffix when jitter is on.
pub fn condition_id(spec: &MaskSpec) -> String {
    spec.condition().to_string()
}

/// Parses a canonical condition id. `"clean"` yields `None`.
pub fn parse_condition_id(id: &str) -> Result<Option<ConditionKey>> {
    if id == CLEAN {
        return Ok(None);
    }
    let bad = || Error::Condition(id.to_string());
    let mut parts = id.split('-');
    let shape: MaskShape = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let mut field = |prefix: char| -> Result<u64> {
        let p = parts.next().ok_or_else(bad)?;
        p.strip_prefix(prefix)
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)
    };
    let density = field('d')?;
    let alpha = field('a')?;
    let seed = field('s')?;
    let jitter = match parts.next() {
        None => false,
        Some("j") => true,
        Some(_) => return Err(bad()),
    };
    if parts.next().is_some() || density > 100 || alpha > 255 {
        return Err(bad());
    }
    let key = ConditionKey {
        shape,
        density: density as u32,
        opacity_alpha: alpha as u32,
        seed,
        jitter,
    };
    // Rejects non-canonical spellings such as leading zeros or uppercase.
    if key.to_string() != id {
        return Err(bad());
    }
    Ok(Some(key))
}

/// One line of the masked-image index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaskedIndexEntry {
    pub image_id: String,
    pub condition: String,
    /// Relative to the directory holding the index.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub images: usize,
    pub mean_coverage: f64,
}

pub const INDEX_FILE: &str = "index.jsonl";

pub(crate) fn check_file_stem(image_id: &str) -> Result<()> {
    if image_id.is_empty() || image_id == "." || image_id == ".." || image_id.contains(['/', '\\']) {
        return Err(Error::Range(format!("image_id {image_id:?} cannot be used as a file name")));
    }
    Ok(())
}

/// Writes `<out>/<condition_id>/<image_id>.png` for every image and spec,
/// plus `<out>/index.jsonl`. Images are optionally resized before masking.
pub fn write_masked_tree(
    manifest: &CorpusManifest,
    specs: &[MaskSpec],
    resize: Option<(u32, u32)>,
    out: &Path,
) -> Result<(Vec<MaskedIndexEntry>, Vec<ConditionSummary>)> {
    for spec in specs {
        spec.validate()?;
    }
    for e in &manifest.entries {
        check_file_stem(&e.image_id)?;
    }
    let conditions: Vec<String> = specs.iter().map(condition_id).collect();
    for c in &conditions {
        let dir = out.join(c);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let per_image: Vec<Vec<(MaskedIndexEntry, f64)>> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<Vec<(MaskedIndexEntry, f64)>> {
            let mut img = manifest.load_image(entry)?;
            if let Some((w, h)) = resize {
                img = resize_to(&img, w, h)?;
            }
            let mut rows = Vec::with_capacity(specs.len());
            for (spec, cond) in specs.iter().zip(&conditions) {
                let layer = rasterize(spec, img.width(), img.height())?;
                let masked = apply_layer(&img, &layer, spec.color, spec.opacity_alpha)?;
                let rel = format!("{cond}/{}.png", entry.image_id);
                masked.save_png(out.join(&rel))?;
                rows.push((
                    MaskedIndexEntry {
                        image_id: entry.image_id.clone(),
                        condition: cond.clone(),
                        path: rel,
                    },
                    coverage_fraction(&layer),
                ));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(MaskedIndexEntry, f64)> = per_image.into_iter().flatten().collect();
    rows.sort_by(|a, b| (&a.0.condition, &a.0.image_id).cmp(&(&b.0.condition, &b.0.image_id)));

    let summaries = conditions
        .iter()
        .map(|c| {
            let cov: Vec<f64> = rows.iter().filter(|r| &r.0.condition == c).map(|r| r.1).collect();
            ConditionSummary {
                condition: c.clone(),
                images: cov.len(),
                mean_coverage: if cov.is_empty() { 0.0 } else { cov.iter().sum::<f64>() / cov.len() as f64 },
            }
        })
        .collect();
    let index: Vec<MaskedIndexEntry> = rows.into_iter().map(|r| r.0).collect();
    jsonl::write_lines(&out.join(INDEX_FILE), None, &index)?;
    Ok((index, summaries))
}

/// A loaded masked-image index with paths resolved against its directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedIndex {
    pub entries: Vec<MaskedIndexEntry>,
    pub base_dir: PathBuf,
}

impl MaskedIndex {
    pub fn resolve(&self, entry: &MaskedIndexEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load_masked_index(path: impl AsRef<Path>) -> Result<MaskedIndex> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    for (no, value) in jsonl::read_values(path)? {
        let e: MaskedIndexEntry =
            serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
        entries.push(e);
    }
    Ok(MaskedIndex {
        entries,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}
