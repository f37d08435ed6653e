//! Labeled image corpora: manifests, seeded subsets and resizing.
//!
//! A manifest is a JSON-lines file with one `{"image_id", "path", "label"}`
//! object per line. Derived manifests start with a header object recording
//! the generator, parent manifest and seed that produced them. Relative paths
//! are resolved against the directory holding the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::jsonl;

/// Identifier of the sampling algorithm: ChaCha8 seeded through
/// `seed_from_u64`, unbiased rejection sampling over `next_u64`, partial
/// Fisher-Yates over entries sorted by image_id.
pub const SUBSAMPLE_PRNG: &str = "chacha8-fisher-yates-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub header: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestHeader {
    pub fn derived_from(parent: &str) -> Self {
        Self {
            header: true,
            prng: None,
            parent: Some(parent.to_string()),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub header: Option<ManifestHeader>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId(e.image_id.clone()));
            }
        }
        Ok(Self {
            header: None,
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<RgbImage> {
        RgbImage::load(self.resolve(entry))
    }

    /// Decodes every image, reporting the first failure in manifest order.
    pub fn validate(&self) -> Result<()> {
        let failures: Vec<Option<Error>> = self
            .entries
            .par_iter()
            .map(|e| self.load_image(e).err())
            .collect();
        match failures.into_iter().flatten().next() {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    /// Writes the manifest. Relative paths are rewritten so they still
    /// resolve from the new location.
    pub fn save(&self, path: &Path) -> Result<()> {
        let target_dir = path.parent().unwrap_or(Path::new(""));
        let rows: Vec<ManifestEntry> = self
            .entries
            .iter()
            .map(|e| {
                let p = Path::new(&e.path);
                let path = if p.is_absolute() || same_dir(&self.base_dir, target_dir) {
                    e.path.clone()
                } else {
                    self.base_dir.join(p).to_string_lossy().into_owned()
                };
                ManifestEntry {
                    path,
                    ..e.clone()
                }
            })
            .collect();
        let header = self
            .header
            .as_ref()
            .map(|h| serde_json::to_value(h).expect("header serializes"));
        jsonl::write_lines(path, header.as_ref(), &rows)
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    let norm = |p: &Path| {
        if p.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            p.to_path_buf()
        }
    };
    let (a, b) = (norm(a), norm(b));
    a == b || matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

/// Loads a JSON-lines manifest, keeping entries in file order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let mut header = None;
    let mut entries = Vec::new();
    for (idx, (no, line)) in jsonl::read_lines(path)?.into_iter().enumerate() {
        let value: serde_json::Value = jsonl::parse_line(path, no, &line)?;
        if jsonl::is_header(&value) {
            if idx != 0 {
                return Err(Error::format(path, no, "header object is only allowed on the first line"));
            }
            header = Some(
                serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?,
            );
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
        entries.push(entry);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = CorpusManifest::new(entries, base)?;
    manifest.header = header;
    Ok(manifest)
}

/// Uniform integer in `[0, bound)` by rejection, independent of any `rand` version.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let r = rng.next_u64();
        if r < zone {
            return r % bound;
        }
    }
}

/// Draws `n` entries without replacement. The result is sorted by image_id
/// and depends only on the set of entries, `n` and `seed`.
pub fn subsample(manifest: &CorpusManifest, n: usize, seed: u64) -> Result<CorpusManifest> {
    if n > manifest.len() {
        return Err(Error::Range(format!(
            "cannot sample {n} entries from a corpus of {}",
            manifest.len()
        )));
    }
    let mut pool: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    pool.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let j = i + bounded(&mut rng, (pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut picked: Vec<ManifestEntry> = pool[..n].iter().map(|e| (*e).clone()).collect();
    picked.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(CorpusManifest {
        header: Some(ManifestHeader {
            header: true,
            prng: Some(SUBSAMPLE_PRNG.to_string()),
            parent: None,
            seed: Some(seed),
        }),
        entries: picked,
        base_dir: manifest.base_dir.clone(),
    })
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_to(image: &RgbImage, w: u32, h: u32) -> Result<RgbImage> {
    if w == 0 || h == 0 {
        return Err(Error::Range(format!("resize target must be at least 1x1, got {w}x{h}")));
    }
    let (sw, sh) = image.dimensions();
    if (sw, sh) == (w, h) {
        return Ok(image.clone());
    }
    let taps = |dst: u32, src: u32| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        let max = (src - 1) as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src as usize - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let xs = taps(w, sw);
    let ys = taps(h, sh);
    let src = image.as_raw();
    let stride = sw as usize * 3;
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| src[y * stride + x * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(w, h, out)
}
