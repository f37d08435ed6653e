#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maskbench::corpus::{CorpusManifest, ManifestEntry};
use maskbench::eval::PredictionRecord;
use maskbench::RgbImage;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_maskbench"));
    c.env_remove("MASKBENCH_JOBS");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "maskbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    let mut px = vec![0u8; (w * h * 3) as usize];
    rng.fill_bytes(&mut px);
    RgbImage::from_raw(w, h, px).unwrap()
}

/// Smooth image that exercises SSIM structure better than noise.
pub fn gradient_image(i: u32, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        [
            ((x * 255 / w.max(1) + i * 17) % 256) as u8,
            ((y * 255 / h.max(1) + i * 31) % 256) as u8,
            (((x + y) * 3 + i * 7) % 256) as u8,
        ]
    })
    .unwrap()
}

/// Writes `n` PNGs and `manifest.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, n: usize, w: u32, h: u32, seed: u64) -> (PathBuf, CorpusManifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let entries: Vec<ManifestEntry> = (0..n)
        .map(|i| {
            let img = if i % 2 == 0 {
                random_image(&mut rng, w, h)
            } else {
                gradient_image(i as u32, w, h)
            };
            let path = format!("images/img{i:03}.png");
            img.save_png(dir.join(&path)).unwrap();
            ManifestEntry {
                image_id: format!("img{i:03}"),
                path,
                label: format!("class{}", i % 10),
            }
        })
        .collect();
    let manifest = CorpusManifest::new(entries, dir).unwrap();
    let path = dir.join("manifest.jsonl");
    manifest.save(&path).unwrap();
    (path, manifest)
}

/// A record whose top-k is consistent with its label, rank and score.
pub fn record(
    rng: &mut ChaCha8Rng,
    model: &str,
    image_id: &str,
    label: &str,
    condition: &str,
    gt_rank: u32,
    with_score: bool,
) -> PredictionRecord {
    // Distinct descending scores so ranks are unambiguous.
    let mut scores: Vec<f64> = (0..5).map(|_| (rng.next_u32() % 1_000_000) as f64 / 1e6 + 1e-3).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    while scores.len() < 5 {
        let last = *scores.last().unwrap();
        scores.push(last / 2.0);
    }
    let gt_score = if gt_rank <= 5 {
        scores[gt_rank as usize - 1]
    } else {
        scores[4] * (rng.next_u32() % 1000) as f64 / 1000.0
    };
    let topk = scores
        .iter()
        .enumerate()
        .map(|(i, &sc)| {
            let class = if i + 1 == gt_rank as usize {
                label.to_string()
            } else {
                format!("other{i}")
            };
            (class, sc)
        })
        .collect();
    PredictionRecord {
        model: model.into(),
        image_id: image_id.into(),
        condition: condition.into(),
        topk,
        gt_rank,
        gt_score: with_score.then_some(gt_score),
    }
}

pub fn rank(rng: &mut ChaCha8Rng, max: u32) -> u32 {
    1 + rng.next_u32() % max
}

/// sha256 of every file below `root`, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex(&Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
