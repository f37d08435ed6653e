//! Density/opacity grid search with regression-line selection.
//!
//! Each `(shape, density, opacity)` combo draws its own seeded image sample,
//! asks a [`PredictionProvider`] for clean and masked predictions, and records
//! the Acc@1 drop against the mean perceptual quality of the masked sample.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{resize_to, subsample, CorpusManifest};
use crate::error::{Error, Result};
use crate::eval::{load_predictions, PointDelta, PredictionRecord};
use crate::image::RgbImage;
use crate::jsonl;
use crate::maskgen::{apply_layer, check_file_stem, condition_id, rasterize, MaskShape, MaskSpec, MaskedIndexEntry, CLEAN, INDEX_FILE};
use crate::metrics::{cosine_similarity, psnr, ssim, QualityComponents, QualityMode, QualityWeights};
use crate::regression::fit_polynomial;

pub const MIN_SAMPLES: usize = 5;
pub const MAX_SAMPLES: usize = 20;

fn default_samples() -> usize {
    10
}

fn default_quality() -> QualityMode {
    QualityMode::ThreeMetric
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub shapes: Vec<MaskShape>,
    pub densities: Vec<u32>,
    pub opacities: Vec<u32>,
    #[serde(default = "default_samples")]
    pub samples_per_combo: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub color: [u8; 3],
    #[serde(default)]
    pub resize: Option<[u32; 2]>,
    #[serde(default = "default_quality")]
    pub quality: QualityMode,
    /// Only used when `quality` is composite.
    #[serde(default)]
    pub weights: QualityWeights,
    /// Lifts the 5..=20 bound on `samples_per_combo`.
    #[serde(default)]
    pub allow_any_samples: bool,
}

impl GridSpec {
    pub fn new(shapes: Vec<MaskShape>, densities: Vec<u32>, opacities: Vec<u32>) -> Self {
        Self {
            shapes,
            densities,
            opacities,
            samples_per_combo: default_samples(),
            seed: 0,
            color: [0, 0, 0],
            resize: None,
            quality: default_quality(),
            weights: QualityWeights::default(),
            allow_any_samples: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.densities.is_empty() || self.opacities.is_empty() {
            return Err(Error::Range("grid needs at least one shape, density and opacity".into()));
        }
        let dup = |n: usize, unique: usize, what: &str| {
            if n != unique {
                Err(Error::Range(format!("grid lists a {what} twice")))
            } else {
                Ok(())
            }
        };
        dup(self.shapes.len(), self.shapes.iter().collect::<BTreeSet<_>>().len(), "shape")?;
        dup(self.densities.len(), self.densities.iter().collect::<BTreeSet<_>>().len(), "density")?;
        dup(self.opacities.len(), self.opacities.iter().collect::<BTreeSet<_>>().len(), "opacity")?;
        for spec in self.specs() {
            spec.validate()?;
        }
        if self.samples_per_combo == 0 {
            return Err(Error::Range("samples_per_combo must be at least 1".into()));
        }
        if !self.allow_any_samples && !(MIN_SAMPLES..=MAX_SAMPLES).contains(&self.samples_per_combo) {
            return Err(Error::Range(format!(
                "samples_per_combo {} outside {MIN_SAMPLES}..={MAX_SAMPLES} (set allow_any_samples to override)",
                self.samples_per_combo
            )));
        }
        if let Some([w, h]) = self.resize {
            if w == 0 || h == 0 {
                return Err(Error::Range("resize must be at least 1x1".into()));
            }
        }
        if self.quality == QualityMode::Composite {
            self.weights.validate()?;
        }
        Ok(())
    }

    /// Combos in shape, density, opacity order.
    pub fn specs(&self) -> Vec<MaskSpec> {
        let mut out = Vec::new();
        for &shape in &self.shapes {
            for &d in &self.densities {
                for &a in &self.opacities {
                    out.push(MaskSpec::new(shape, d, a).with_color(self.color).with_seed(self.seed));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboResult {
    pub mask: MaskShape,
    pub density: u32,
    pub opacity_alpha: u32,
    pub condition: String,
    /// `100 * (Acc@1 clean - Acc@1 masked)` over matched (model, image) pairs.
    pub acc_diff: f64,
    pub quality: f64,
    pub n_images: usize,
    pub n_pairs: usize,
    pub selected: bool,
}

/// Images handed to a provider for one condition, sorted by image_id.
pub struct Batch<'a> {
    pub condition: &'a str,
    pub images: &'a [(String, RgbImage)],
}

/// Supplies predictions for a batch. Records for other conditions or
/// images are ignored by the caller.
pub trait PredictionProvider: Sync {
    fn predict(&self, batch: &Batch) -> Result<Vec<PredictionRecord>>;
}

/// Precomputed predictions in `<dir>/<condition>.jsonl` (`clean.jsonl` for clean).
pub struct DirectoryProvider {
    dir: PathBuf,
}

impl DirectoryProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl PredictionProvider for DirectoryProvider {
    fn predict(&self, batch: &Batch) -> Result<Vec<PredictionRecord>> {
        let path = self.dir.join(format!("{}.jsonl", batch.condition));
        if !path.is_file() {
            return Err(Error::Provider(format!("missing prediction file {}", path.display())));
        }
        Ok(load_predictions(&path)?.records().to_vec())
    }
}

/// Runs a shell command per condition. The template may use `{condition}`,
/// `{images}` (directory of PNGs), `{index}` (masked-image index) and `{out}`
/// (prediction JSONL the command must create). Each value is shell-quoted.
pub struct CommandProvider {
    template: String,
    work_dir: PathBuf,
}

impl CommandProvider {
    pub fn new(template: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            template: template.into(),
            work_dir: work_dir.into(),
        }
    }

    pub fn render(&self, condition: &str, images: &Path, index: &Path, out: &Path) -> String {
        self.template
            .replace("{condition}", &shell_quote(condition))
            .replace("{images}", &shell_quote(&images.to_string_lossy()))
            .replace("{index}", &shell_quote(&index.to_string_lossy()))
            .replace("{out}", &shell_quote(&out.to_string_lossy()))
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

impl PredictionProvider for CommandProvider {
    fn predict(&self, batch: &Batch) -> Result<Vec<PredictionRecord>> {
        let dir = self.work_dir.join(batch.condition);
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut index = Vec::with_capacity(batch.images.len());
        for (id, img) in batch.images {
            check_file_stem(id)?;
            let rel = format!("images/{id}.png");
            img.save_png(dir.join(&rel))?;
            index.push(MaskedIndexEntry {
                image_id: id.clone(),
                condition: batch.condition.to_string(),
                path: rel,
            });
        }
        let index_path = dir.join(INDEX_FILE);
        jsonl::write_lines(&index_path, None, &index)?;
        let out = dir.join("predictions.jsonl");
        if out.exists() {
            std::fs::remove_file(&out).map_err(|e| Error::io(&out, e))?;
        }
        let cmd = self.render(batch.condition, &images, &index_path, &out);
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Error::Provider(format!("cannot run {cmd:?}: {e}")))?;
        if !status.success() {
            return Err(Error::Provider(format!("{cmd:?} exited with {status}")));
        }
        if !out.is_file() {
            return Err(Error::Provider(format!("{cmd:?} did not write {}", out.display())));
        }
        Ok(load_predictions(&out)?.records().to_vec())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sampling seed for one combo.
pub fn combo_seed(seed: u64, spec: &MaskSpec) -> u64 {
    let shape = MaskShape::ALL.iter().position(|s| *s == spec.shape).unwrap() as u64;
    [shape, spec.density as u64, spec.opacity_alpha as u64]
        .into_iter()
        .fold(splitmix(seed), |h, v| splitmix(h ^ v))
}

type Keyed<'a> = HashMap<(&'a str, &'a str), &'a PredictionRecord>;

fn keyed<'a>(records: &'a [PredictionRecord], condition: &str, ids: &BTreeSet<&str>) -> Keyed<'a> {
    records
        .iter()
        .filter(|r| r.condition == condition && ids.contains(r.image_id.as_str()))
        .map(|r| ((r.model.as_str(), r.image_id.as_str()), r))
        .collect()
}

fn quality_of(original: &RgbImage, masked: &RgbImage, grid: &GridSpec) -> Result<f64> {
    let c = QualityComponents {
        cosine: cosine_similarity(original, masked)?,
        psnr_db: psnr(original, masked)?,
        ssim: ssim(original, masked)?,
        lpips: None,
    };
    c.quality(grid.quality, &grid.weights)
}

/// Evaluates every combo. Output order follows [`GridSpec::specs`] and
/// every `selected` flag is false.
pub fn run_grid(grid: &GridSpec, corpus: &CorpusManifest, provider: &dyn PredictionProvider) -> Result<Vec<ComboResult>> {
    grid.validate()?;
    let specs = grid.specs();
    if grid.samples_per_combo > corpus.len() {
        return Err(Error::EmptySample(format!(
            "samples_per_combo {} exceeds the corpus size {}",
            grid.samples_per_combo,
            corpus.len()
        )));
    }
    let samples: Vec<Vec<String>> = specs
        .iter()
        .map(|s| {
            subsample(corpus, grid.samples_per_combo, combo_seed(grid.seed, s))
                .map(|m| m.entries.into_iter().map(|e| e.image_id).collect())
        })
        .collect::<Result<_>>()?;

    let union: BTreeSet<&str> = samples.iter().flatten().map(String::as_str).collect();
    let clean: Vec<(String, RgbImage)> = union
        .par_iter()
        .map(|id| {
            let entry = corpus.get(id).expect("sampled from corpus");
            let mut img = corpus.load_image(entry)?;
            if let Some([w, h]) = grid.resize {
                img = resize_to(&img, w, h)?;
            }
            Ok((id.to_string(), img))
        })
        .collect::<Result<_>>()?;
    let clean_by_id: HashMap<&str, &RgbImage> = clean.iter().map(|(id, img)| (id.as_str(), img)).collect();
    let clean_records = provider.predict(&Batch {
        condition: CLEAN,
        images: &clean,
    })?;

    specs
        .par_iter()
        .zip(samples.par_iter())
        .map(|(spec, ids)| {
            let condition = condition_id(spec);
            let mut masked = Vec::with_capacity(ids.len());
            let mut quality_sum = 0.0;
            for id in ids {
                let original = clean_by_id[id.as_str()];
                let layer = rasterize(spec, original.width(), original.height())?;
                let img = apply_layer(original, &layer, spec.color, spec.opacity_alpha)?;
                quality_sum += quality_of(original, &img, grid)?;
                masked.push((id.clone(), img));
            }
            let masked_records = provider.predict(&Batch {
                condition: &condition,
                images: &masked,
            })?;

            let id_set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            let clean_k = keyed(&clean_records, CLEAN, &id_set);
            let masked_k = keyed(&masked_records, &condition, &id_set);
            let (mut clean_hits, mut masked_hits, mut n) = (0, 0, 0);
            for (key, m) in &masked_k {
                if let Some(c) = clean_k.get(key) {
                    n += 1;
                    clean_hits += (c.gt_rank == 1) as usize;
                    masked_hits += (m.gt_rank == 1) as usize;
                }
            }
            if n == 0 {
                return Err(Error::EmptySample(format!(
                    "no (model, image) pair has both clean and {condition} predictions"
                )));
            }
            Ok(ComboResult {
                mask: spec.shape,
                density: spec.density,
                opacity_alpha: spec.opacity_alpha,
                condition,
                acc_diff: PointDelta { clean_hits, masked_hits, n }.value(),
                quality: quality_sum / ids.len() as f64,
                n_images: ids.len(),
                n_pairs: n,
                selected: false,
            })
        })
        .collect()
}

/// Line fitted through the best-quality combo of each 1-point acc_diff bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionLine {
    pub slope: f64,
    pub intercept: f64,
    pub buckets: usize,
}

impl SelectionLine {
    pub fn eval(&self, acc_diff: f64) -> f64 {
        self.slope * acc_diff + self.intercept
    }
}

/// Indices of the bucket maxima; ties keep the earliest result.
pub fn bucket_maxima(results: &[ComboResult]) -> Vec<usize> {
    let mut best: BTreeMap<i64, usize> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        let bucket = r.acc_diff.floor() as i64;
        match best.get(&bucket) {
            Some(&j) if results[j].quality >= r.quality => {}
            _ => {
                best.insert(bucket, i);
            }
        }
    }
    best.into_values().collect()
}

/// Sets `selected` on results strictly above the fitted line. Points within
/// `1e-9 * max |quality|` of the line count as on it.
pub fn select_above_regression(results: &mut [ComboResult]) -> Result<SelectionLine> {
    if results.iter().any(|r| !r.acc_diff.is_finite() || !r.quality.is_finite()) {
        return Err(Error::Range("acc_diff and quality must be finite".into()));
    }
    let kept = bucket_maxima(results);
    let points: Vec<(f64, f64)> = kept.iter().map(|&i| (results[i].acc_diff, results[i].quality)).collect();
    let fit = fit_polynomial(&points, 1).map_err(|e| match e {
        Error::Underdetermined(_) => Error::Underdetermined(format!(
            "selection needs at least 2 accuracy buckets, got {}",
            points.len()
        )),
        other => other,
    })?;
    let line = SelectionLine {
        intercept: fit.coefficients[0],
        slope: fit.coefficients[1],
        buckets: points.len(),
    };
    let scale = results.iter().map(|r| r.quality.abs()).fold(0.0, f64::max);
    let tol = 1e-9 * scale;
    for r in results.iter_mut() {
        r.selected = r.quality - line.eval(r.acc_diff) > tol;
    }
    Ok(line)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeOptimum {
    /// Most frequent density among selected combos; ties take the smallest.
    pub modal_density: u32,
    pub opacity_min: u32,
    pub opacity_max: u32,
    pub selected: usize,
}

pub type OptimaSummary = BTreeMap<MaskShape, ShapeOptimum>;

pub fn report_optima(results: &[ComboResult]) -> Result<OptimaSummary> {
    let mut by_shape: BTreeMap<MaskShape, Vec<&ComboResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.selected) {
        by_shape.entry(r.mask).or_default().push(r);
    }
    if by_shape.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(by_shape
        .into_iter()
        .map(|(shape, rs)| {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for r in &rs {
                *counts.entry(r.density).or_default() += 1;
            }
            let top = *counts.values().max().unwrap();
            let modal_density = *counts.iter().find(|(_, c)| **c == top).unwrap().0;
            let opacities = rs.iter().map(|r| r.opacity_alpha);
            (
                shape,
                ShapeOptimum {
                    modal_density,
                    opacity_min: opacities.clone().min().unwrap(),
                    opacity_max: opacities.max().unwrap(),
                    selected: rs.len(),
                },
            )
        })
        .collect())
}
