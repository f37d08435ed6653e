//! Perceptual quality: cosine similarity, PSNR, SSIM and the weighted composite.
//!
//! LPIPS needs a learned network, so it is never computed here. Scores come
//! from a JSON-lines sidecar and are folded in with [`attach_lpips`]; without
//! them the remaining weights are renormalized.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{resize_to, CorpusManifest};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::jsonl;
use crate::maskgen::{MaskedIndex, MaskedIndexEntry};

/// Reported PSNR for identical images, and the ceiling for every PSNR value.
pub const PSNR_CAP_DB: f64 = 100.0;
/// PSNR at or above this maps to 1.0 inside the composite.
pub const PSNR_NORM_DB: f64 = 50.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub cosine: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        Self {
            cosine: 0.15,
            psnr: 0.25,
            ssim: 0.35,
            lpips: 0.25,
        }
    }
}

impl QualityWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cosine, self.psnr, self.ssim, self.lpips];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Weight(format!("weights must be finite and non-negative: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Weight(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// How a single quality number is derived from the components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityMode {
    /// Weighted composite of all available components.
    #[default]
    Composite,
    /// Unweighted mean of normalized cosine, PSNR and SSIM.
    ThreeMetric,
}

impl std::str::FromStr for QualityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(QualityMode::Composite),
            "three-metric" => Ok(QualityMode::ThreeMetric),
            _ => Err(Error::Range(format!(
                "unknown quality mode {s:?} (expected composite or three-metric)"
            ))),
        }
    }
}

/// Raw per-image metric values before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityComponents {
    pub cosine: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

impl QualityComponents {
    pub fn normalized(&self) -> [f64; 3] {
        [
            self.cosine.clamp(0.0, 1.0),
            normalize_psnr(self.psnr_db),
            self.ssim.clamp(0.0, 1.0),
        ]
    }

    pub fn quality(&self, mode: QualityMode, weights: &QualityWeights) -> Result<f64> {
        match mode {
            QualityMode::Composite => composite_quality(self, weights),
            QualityMode::ThreeMetric => Ok(three_metric_quality(self)),
        }
    }
}

/// One line of the quality output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub image_id: String,
    pub condition: String,
    pub cosine: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub composite: f64,
}

impl QualityReport {
    pub fn components(&self) -> QualityComponents {
        QualityComponents {
            cosine: self.cosine,
            psnr_db: self.psnr_db,
            ssim: self.ssim,
            lpips: self.lpips,
        }
    }
}

pub fn normalize_psnr(db: f64) -> f64 {
    (db.min(PSNR_NORM_DB) / PSNR_NORM_DB).max(0.0)
}

/// Cosine similarity of the flattened channel vectors.
pub fn cosine_similarity(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.ensure_same_size(b)?;
    let (mut dot, mut na, mut nb) = (0u128, 0u128, 0u128);
    for (&x, &y) in a.as_raw().iter().zip(b.as_raw()) {
        let (x, y) = (x as u128, y as u128);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0 || nb == 0 {
        return Err(Error::DegenerateInput("cosine similarity of an all-zero image".into()));
    }
    // Exact Cauchy-Schwarz equality means the vectors are parallel.
    if let (Some(lhs), Some(rhs)) = (dot.checked_mul(dot), na.checked_mul(nb)) {
        if lhs == rhs {
            return Ok(1.0);
        }
    }
    let cos = dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt());
    Ok(cos.clamp(0.0, 1.0))
}

/// `10 log10(255^2 / MSE)` over every channel, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.ensure_same_size(b)?;
    let sse: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / a.as_raw().len() as f64;
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Filters `src` (w x h) with the separable kernel, keeping only full windows.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on Rec. 601 luma with an 11x11 Gaussian window (sigma 1.5),
/// averaged over every window position that fits inside the image.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.ensure_same_size(b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: a.width(),
            height: a.height(),
            min: SSIM_WINDOW as u32,
        });
    }
    let x = a.luma();
    let y = b.luma();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = gaussian_kernel();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, w, h, &k));

    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

/// Weighted composite in `[0, 1]`. Without LPIPS the other three weights are
/// renormalized to sum to one.
pub fn composite_quality(c: &QualityComponents, weights: &QualityWeights) -> Result<f64> {
    weights.validate()?;
    let [cos, ps, ss] = c.normalized();
    let partial = weights.cosine * cos + weights.psnr * ps + weights.ssim * ss;
    let total = match c.lpips {
        Some(l) => partial + weights.lpips * (1.0 - l.clamp(0.0, 1.0)),
        None => {
            let wsum = weights.cosine + weights.psnr + weights.ssim;
            if wsum <= 0.0 {
                return Err(Error::Weight("no weight left on the available components".into()));
            }
            partial / wsum
        }
    };
    Ok(total.clamp(0.0, 1.0))
}

pub fn three_metric_quality(c: &QualityComponents) -> f64 {
    let [cos, ps, ss] = c.normalized();
    (cos + ps + ss) / 3.0
}

/// Scores a masked image against its original.
pub fn score_pair(
    image_id: &str,
    condition: &str,
    original: &RgbImage,
    masked: &RgbImage,
    weights: &QualityWeights,
) -> Result<QualityReport> {
    let components = QualityComponents {
        cosine: cosine_similarity(original, masked)?,
        psnr_db: psnr(original, masked)?,
        ssim: ssim(original, masked)?,
        lpips: None,
    };
    Ok(QualityReport {
        image_id: image_id.to_string(),
        condition: condition.to_string(),
        cosine: components.cosine,
        psnr_db: components.psnr_db,
        ssim: components.ssim,
        lpips: None,
        composite: composite_quality(&components, weights)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsRecord {
    pub image_id: String,
    pub condition: String,
    pub lpips: f64,
}

/// LPIPS scores keyed by `(image_id, condition)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpipsSidecar {
    scores: HashMap<(String, String), f64>,
}

impl LpipsSidecar {
    pub fn from_records(records: impl IntoIterator<Item = LpipsRecord>) -> Self {
        Self {
            scores: records
                .into_iter()
                .map(|r| ((r.image_id, r.condition), r.lpips))
                .collect(),
        }
    }

    pub fn get(&self, image_id: &str, condition: &str) -> Option<f64> {
        self.scores
            .get(&(image_id.to_string(), condition.to_string()))
            .copied()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut scores = HashMap::new();
        for (no, value) in jsonl::read_values(path)? {
            let r: LpipsRecord =
                serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
            if scores.insert((r.image_id.clone(), r.condition.clone()), r.lpips).is_some() {
                return Err(Error::format(
                    path,
                    no,
                    format!("duplicate LPIPS score for ({}, {})", r.image_id, r.condition),
                ));
            }
        }
        Ok(Self { scores })
    }
}

/// Adds the sidecar's LPIPS score and recomputes the composite with full weights.
pub fn attach_lpips(report: &QualityReport, sidecar: &LpipsSidecar, weights: &QualityWeights) -> Result<QualityReport> {
    let lpips = sidecar
        .get(&report.image_id, &report.condition)
        .ok_or_else(|| Error::KeyMissing {
            image_id: report.image_id.clone(),
            condition: report.condition.clone(),
        })?;
    if !(0.0..=1.0).contains(&lpips) {
        return Err(Error::Range(format!(
            "LPIPS {lpips} for ({}, {}) outside [0, 1]",
            report.image_id, report.condition
        )));
    }
    let mut out = report.clone();
    out.lpips = Some(lpips);
    out.composite = composite_quality(&out.components(), weights)?;
    Ok(out)
}

/// Scores every index entry against its manifest original, resized to
/// `resize` first when given. Rows are sorted by `(image_id, condition)`.
pub fn score_index(
    manifest: &CorpusManifest,
    index: &MaskedIndex,
    resize: Option<(u32, u32)>,
    weights: &QualityWeights,
    sidecar: Option<&LpipsSidecar>,
) -> Result<Vec<QualityReport>> {
    weights.validate()?;
    let mut groups: BTreeMap<&str, Vec<&MaskedIndexEntry>> = BTreeMap::new();
    for e in &index.entries {
        groups.entry(e.image_id.as_str()).or_default().push(e);
    }
    let mut seen = std::collections::HashSet::new();
    for e in &index.entries {
        if !seen.insert((&e.image_id, &e.condition)) {
            return Err(Error::Range(format!(
                "masked index lists ({}, {}) twice",
                e.image_id, e.condition
            )));
        }
    }
    let groups: Vec<(&str, Vec<&MaskedIndexEntry>)> = groups.into_iter().collect();
    let scored: Vec<Vec<QualityReport>> = groups
        .par_iter()
        .map(|(id, entries)| {
            let entry = manifest.get(id).ok_or_else(|| Error::UnknownImage(id.to_string()))?;
            let mut original = manifest.load_image(entry)?;
            if let Some((w, h)) = resize {
                original = resize_to(&original, w, h)?;
            }
            entries
                .iter()
                .map(|e| {
                    let masked = RgbImage::load(index.resolve(e))?;
                    let report = score_pair(&e.image_id, &e.condition, &original, &masked, weights)?;
                    match sidecar {
                        Some(s) => attach_lpips(&report, s, weights),
                        None => Ok(report),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<QualityReport> = scored.into_iter().flatten().collect();
    out.sort_by(|a, b| (&a.image_id, &a.condition).cmp(&(&b.image_id, &b.condition)));
    Ok(out)
}

/// Header line recording how the composite was formed.
pub fn quality_header(weights: &QualityWeights) -> serde_json::Value {
    serde_json::json!({
        "header": true,
        "weights": weights,
        "psnr_norm_cap_db": PSNR_NORM_DB,
        "psnr_identical_db": PSNR_CAP_DB,
        "ssim": "rec601-luma gaussian-11 sigma-1.5 valid-windows",
        "cosine": "raw-pixels",
    })
}

pub fn write_quality_reports(path: &Path, weights: &QualityWeights, reports: &[QualityReport]) -> Result<()> {
    jsonl::write_lines(path, Some(&quality_header(weights)), reports)
}

pub fn load_quality_reports(path: impl AsRef<Path>) -> Result<Vec<QualityReport>> {
    let path = path.as_ref();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (no, value) in jsonl::read_values(path)? {
        let r: QualityReport =
            serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
        if !seen.insert((r.image_id.clone(), r.condition.clone())) {
            return Err(Error::format(
                path,
                no,
                format!("duplicate quality row for ({}, {})", r.image_id, r.condition),
            ));
        }
        out.push(r);
    }
    Ok(out)
}
