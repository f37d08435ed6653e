mod common;

use std::path::Path;

use common::*;
use maskbench::corpus::{load_manifest, resize_to};
use maskbench::eval::{write_predictions, PredictionRecord};
use maskbench::maskgen::{rasterize, MaskShape, MaskSpec};
use maskbench::metrics::load_quality_reports;
use maskbench::RgbImage;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn stderr(args: &[&str]) -> String {
    String::from_utf8_lossy(&run(args).stderr).into_owned()
}

#[test]
fn exit_codes_for_usage() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["mask", "--bogus"]), 1);
    assert_eq!(code(&["mask", "--shape", "hexagon"]), 1);
    // Missing required option after merging.
    assert_eq!(code(&["mask", "--shape", "circle"]), 1);
    assert_eq!(code(&["mask", "--manifest", "x", "--shape", "circle", "--density", "120", "--alpha", "3"]), 1);
    assert_eq!(code(&["--jobs", "0", "validate", "--manifest", "x"]), 1);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let args = ["mask", "--manifest", s(&missing), "--shape", "circle", "--density", "70", "--alpha", "50"];
    assert_eq!(code(&args), 2);
    assert!(stderr(&args).contains("nope.jsonl"));
}

#[test]
fn density_zero_keeps_resized_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, manifest) = write_corpus(dir.path(), 4, 30, 20, 1);
    let out = dir.path().join("m");
    run_ok(&[
        "mask", "--manifest", s(&manifest_path), "--shape", "knit", "--density", "0", "--alpha", "255",
        "--resize", "24x16", "--out", s(&out),
    ]);
    for e in &manifest.entries {
        let original = resize_to(&manifest.load_image(e).unwrap(), 24, 16).unwrap();
        let masked = RgbImage::load(out.join("knit-d0-a255-s0").join(format!("{}.png", e.image_id))).unwrap();
        assert_eq!(original, masked);
    }
}

#[test]
fn opaque_black_mask_blackens_covered_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, manifest) = write_corpus(dir.path(), 3, 40, 40, 2);
    let out = dir.path().join("m");
    let stdout = run_ok(&[
        "mask", "--manifest", s(&manifest_path), "--shape", "circle", "--density", "70", "--alpha", "255",
        "--color", "0,0,0", "--out", s(&out),
    ])
    .stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("circle-d70-a255-s0\t3\t"));
    let layer = rasterize(&MaskSpec::new(MaskShape::Circle, 70, 255), 40, 40).unwrap();
    for e in &manifest.entries {
        let original = manifest.load_image(e).unwrap();
        let masked = RgbImage::load(out.join("circle-d70-a255-s0").join(format!("{}.png", e.image_id))).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let want = if layer.is_covered(x, y) { [0, 0, 0] } else { original.get(x, y) };
                assert_eq!(masked.get(x, y), want);
            }
        }
    }
}

#[test]
fn seed_and_jitter_change_condition_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, _) = write_corpus(dir.path(), 2, 32, 32, 3);
    let out = dir.path().join("m");
    run_ok(&[
        "--seed", "7", "mask", "--manifest", s(&manifest_path), "--shape", "square", "--density", "50",
        "--alpha", "90", "--jitter", "--out", s(&out),
    ]);
    assert!(out.join("square-d50-a90-s7-j/img000.png").is_file());
}

fn masked_and_scored(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (manifest_path, _) = write_corpus(dir, 4, 32, 24, 4);
    let out = dir.join("m");
    run_ok(&[
        "mask", "--manifest", s(&manifest_path), "--shape", "circle,diamond", "--density", "70",
        "--alpha", "0,128", "--out", s(&out),
    ]);
    (manifest_path, out)
}

#[test]
fn score_identity_and_hand_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, masked) = masked_and_scored(dir.path());
    let q = dir.path().join("q.jsonl");
    run_ok(&["score", "--manifest", s(&manifest), "--masked-index", s(&masked.join("index.jsonl")), "--out", s(&q)]);
    let rows = load_quality_reports(&q).unwrap();
    assert_eq!(rows.len(), 4 * 4);
    let mut keys: Vec<_> = rows.iter().map(|r| (r.image_id.clone(), r.condition.clone())).collect();
    let sorted = {
        let mut k = keys.clone();
        k.sort();
        k
    };
    assert_eq!(keys, sorted);
    keys.dedup();
    assert_eq!(keys.len(), 16);
    for r in &rows {
        if r.condition.contains("-a0-") {
            assert!((r.composite - 1.0).abs() < 1e-12, "{r:?}");
            assert_eq!(r.psnr_db, 100.0);
        } else {
            // Without LPIPS the other weights are rescaled by 1 / 0.75.
            let hand = (0.15 * r.cosine + 0.25 * (r.psnr_db.min(50.0) / 50.0) + 0.35 * r.ssim.max(0.0)) / 0.75;
            assert!((r.composite - hand).abs() < 1e-12, "{r:?} vs {hand}");
            assert!(r.composite < 1.0);
        }
    }
    let header = std::fs::read_to_string(&q).unwrap();
    assert!(header.lines().next().unwrap().contains("\"header\":true"));

    // LPIPS sidecar brings in the fourth weight.
    let side = dir.path().join("lpips.jsonl");
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{{\"image_id\":\"{}\",\"condition\":\"{}\",\"lpips\":0.3}}", r.image_id, r.condition))
        .collect();
    std::fs::write(&side, lines.join("\n") + "\n").unwrap();
    let q2 = dir.path().join("q2.jsonl");
    run_ok(&[
        "score", "--manifest", s(&manifest), "--masked-index", s(&masked.join("index.jsonl")),
        "--lpips-sidecar", s(&side), "--out", s(&q2),
    ]);
    for r in load_quality_reports(&q2).unwrap() {
        let hand = 0.15 * r.cosine + 0.25 * (r.psnr_db.min(50.0) / 50.0) + 0.35 * r.ssim.max(0.0) + 0.25 * (1.0 - 0.3);
        assert!((r.composite - hand).abs() < 1e-12);
        assert_eq!(r.lpips, Some(0.3));
    }

    // A sidecar missing a key is a data error.
    std::fs::write(&side, lines[1..].join("\n") + "\n").unwrap();
    let index = masked.join("index.jsonl");
    let args = [
        "score", "--manifest", s(&manifest), "--masked-index", s(&index),
        "--lpips-sidecar", s(&side), "--out", s(&q2),
    ];
    assert_eq!(code(&args), 2);
}

#[test]
fn score_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_corpus(dir.path(), 2, 32, 24, 5);
    let out = dir.path().join("m");
    run_ok(&[
        "mask", "--manifest", s(&manifest), "--shape", "square", "--density", "40", "--alpha", "99",
        "--resize", "20x20", "--out", s(&out),
    ]);
    let (index, q) = (out.join("index.jsonl"), dir.path().join("q"));
    let args = ["score", "--manifest", s(&manifest), "--masked-index", s(&index), "--out", s(&q)];
    assert_eq!(code(&args), 2);
    assert!(stderr(&args).contains("dimension mismatch"));
    let mut ok = args.to_vec();
    ok.extend(["--resize", "20x20"]);
    run_ok(&ok);
}

fn hand_predictions(dir: &Path) -> (String, String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truths = dir.join("truths.jsonl");
    std::fs::write(&truths, "{\"image_id\":\"a\",\"label\":\"cat\"}\n{\"image_id\":\"b\",\"label\":\"dog\"}\n").unwrap();
    let cond = "circle-d70-a128-s0";
    let clean = vec![
        record(&mut rng, "m", "a", "cat", "clean", 1, true),
        record(&mut rng, "m", "b", "dog", "clean", 1, true),
    ];
    let masked = vec![
        record(&mut rng, "m", "a", "cat", cond, 3, true),
        record(&mut rng, "m", "b", "dog", cond, 1, true),
    ];
    let (cp, mp) = (dir.join("clean.jsonl"), dir.join("masked.jsonl"));
    write_predictions(&cp, &clean).unwrap();
    write_predictions(&mp, &masked).unwrap();
    (s(&truths).into(), s(&cp).into(), s(&mp).into())
}

#[test]
fn eval_two_image_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (truths, clean, masked) = hand_predictions(dir.path());
    let out = dir.path().join("e");
    run_ok(&["eval", "--truths", &truths, "--clean-preds", &clean, "--masked-preds", &masked, "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("delta_acc.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "model,mask,opacity_alpha,delta_acc1,delta_acc5,mean_conf_drop,n");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], &["m", "circle", "128", "50.00", "0.00"]);
    assert_eq!(row[6], "2");
    let ranks = std::fs::read_to_string(out.join("rank_delta.csv")).unwrap();
    assert_eq!(ranks.lines().nth(1).unwrap(), "circle,128,-1,2");
    let acc = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert!(acc.contains("m,clean,100.00,100.00,2"));
    assert!(acc.contains("m,circle-d70-a128-s0,50.00,100.00,2"));
    assert!(!out.join("tradeoff.csv").exists());
}

#[test]
fn eval_masked_equal_clean_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (truths, clean, _) = hand_predictions(dir.path());
    let text = std::fs::read_to_string(&clean).unwrap().replace("\"clean\"", "\"knit-d70-a50-s0\"");
    let masked = dir.path().join("same.jsonl");
    std::fs::write(&masked, text).unwrap();
    let out = dir.path().join("e");
    run_ok(&["eval", "--truths", &truths, "--clean-preds", &clean, "--masked-preds", s(&masked), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("delta_acc.csv")).unwrap();
    assert_eq!(table.lines().nth(1).unwrap(), "m,knit,50,0.00,0.00,0.00,2");
}

#[test]
fn eval_rejects_inconsistent_records() {
    let dir = tempfile::tempdir().unwrap();
    let (truths, clean, masked) = hand_predictions(dir.path());
    let wrong = dir.path().join("wrong.jsonl");
    std::fs::write(&wrong, "{\"image_id\":\"a\",\"label\":\"dog\"}\n{\"image_id\":\"b\",\"label\":\"dog\"}\n").unwrap();
    let out = dir.path().join("e");
    let args = ["eval", "--truths", s(&wrong), "--clean-preds", &clean, "--masked-preds", &masked, "--out", s(&out)];
    assert_eq!(code(&args), 2);
    let dup = dir.path().join("dup.jsonl");
    let line = std::fs::read_to_string(&clean).unwrap();
    std::fs::write(&dup, format!("{line}{line}")).unwrap();
    assert_eq!(code(&["eval", "--truths", &truths, "--clean-preds", s(&dup), "--masked-preds", &masked]), 2);
}

#[test]
fn eval_writes_tradeoff_with_quality() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, masked_tree) = masked_and_scored(dir.path());
    let q = dir.path().join("q.jsonl");
    run_ok(&["score", "--manifest", s(&manifest), "--masked-index", s(&masked_tree.join("index.jsonl")), "--out", s(&q)]);
    let m = load_manifest(&manifest).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut clean = Vec::new();
    let mut masked = Vec::new();
    let conds = ["circle-d70-a0-s0", "circle-d70-a128-s0", "diamond-d70-a0-s0", "diamond-d70-a128-s0"];
    for e in &m.entries {
        clean.push(record(&mut rng, "m", &e.image_id, &e.label, "clean", 1, true));
        for (i, c) in conds.iter().enumerate() {
            masked.push(record(&mut rng, "m", &e.image_id, &e.label, c, 1 + i as u32, true));
        }
    }
    let (cp, mp) = (dir.path().join("c.jsonl"), dir.path().join("mk.jsonl"));
    write_predictions(&cp, &clean).unwrap();
    write_predictions(&mp, &masked).unwrap();
    let out = dir.path().join("e");
    run_ok(&[
        "eval", "--truths", s(&manifest), "--clean-preds", s(&cp), "--masked-preds", s(&mp), "--quality", s(&q),
        "--out", s(&out),
    ]);
    let tradeoff = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    assert_eq!(tradeoff.lines().count(), 5);
    assert!(tradeoff.lines().nth(1).unwrap().starts_with("circle,0,0,1,1"));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("tradeoff_fit.json")).unwrap()).unwrap();
    assert_eq!(fit["fit"]["coefficients"].as_array().unwrap().len(), 3);

    let three = dir.path().join("e3");
    run_ok(&[
        "eval", "--truths", s(&manifest), "--clean-preds", s(&cp), "--masked-preds", s(&mp), "--quality", s(&q),
        "--quality-mode", "three-metric", "--out", s(&three),
    ]);
    assert_ne!(tradeoff, std::fs::read_to_string(three.join("tradeoff.csv")).unwrap());
}

#[test]
fn tradeoff_with_too_few_points_writes_null_fit() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("p.csv");
    std::fs::write(&points, "mask,opacity_alpha,delta_rank,quality\ncircle,50,-14.57,0.45\nknit,50,-0.66,0.54\n").unwrap();
    let out = dir.path().join("t");
    let res = run_ok(&["tradeoff", "--points", s(&points), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("tradeoff_fit.json")).unwrap()).unwrap();
    assert!(fit["fit"].is_null());
    assert!(fit["reason"].as_str().unwrap().contains("underdetermined"));
    assert!(String::from_utf8_lossy(&res.stdout).contains("circle\t50\t15.02"));
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_corpus(dir.path(), 2, 24, 24, 6);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[global]\nseed = 3\nout-dir = {:?}\n\n[mask]\nmanifest = {:?}\nshape = [\"diamond\"]\ndensity = [20]\nalpha = [77]\ncolor = \"255,0,0\"\n",
            s(&dir.path().join("outs")),
            s(&manifest)
        ),
    )
    .unwrap();
    run_ok(&["--config", s(&cfg), "mask"]);
    assert!(dir.path().join("outs/masked/diamond-d20-a77-s3/img000.png").is_file());
    run_ok(&["--config", s(&cfg), "--seed", "4", "mask", "--alpha", "78"]);
    assert!(dir.path().join("outs/masked/diamond-d20-a78-s4/img001.png").is_file());

    std::fs::write(&cfg, "[mask]\nunknown = 1\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "mask"]), 1);
    assert_eq!(code(&["--config", s(&dir.path().join("absent.toml")), "mask"]), 1);
}

#[test]
fn jobs_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_corpus(dir.path(), 6, 24, 24, 9);
    let mut outs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("j{jobs}"));
        let st = bin()
            .env("MASKBENCH_JOBS", jobs)
            .args(["mask", "--manifest", s(&manifest), "--shape", "knit", "--density", "90", "--alpha", "140", "--out", s(&out)])
            .output()
            .unwrap();
        assert!(st.status.success());
        outs.push(tree_hashes(&out));
    }
    assert_eq!(outs[0], outs[1]);
    let st = bin().env("MASKBENCH_JOBS", "zero").args(["validate", "--manifest", s(&manifest)]).output().unwrap().status;
    assert_eq!(st.code(), Some(1));
}

#[test]
fn subsample_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_corpus(dir.path(), 20, 16, 16, 10);
    let a = dir.path().join("sub/a.jsonl");
    let b = dir.path().join("sub/b.jsonl");
    run_ok(&["--seed", "5", "subsample", "--manifest", s(&manifest), "--n", "7", "--out", s(&a)]);
    run_ok(&["--seed", "5", "subsample", "--manifest", s(&manifest), "--n", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let sub = load_manifest(&a).unwrap();
    assert_eq!(sub.len(), 7);
    assert_eq!(sub.header.as_ref().unwrap().prng.as_deref(), Some("chacha8-fisher-yates-v1"));
    let out = run_ok(&["validate", "--manifest", s(&a)]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok manifest"));
    assert_eq!(code(&["subsample", "--manifest", s(&manifest), "--n", "21", "--out", s(&a)]), 2);
    assert_eq!(code(&["validate"]), 1);

    let (truths, clean, _) = hand_predictions(dir.path());
    run_ok(&["validate", "--predictions", &clean, "--truths", &truths]);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"model\":\"m\",\"image_id\":\"a\",\"condition\":\"clean\",\"topk\":[[\"x\",0.1],[\"y\",0.2],[\"z\",0.0],[\"u\",0.0],[\"v\",0.0]],\"gt_rank\":3}\n").unwrap();
    let args = ["validate", "--predictions", s(&bad)];
    assert_eq!(code(&args), 2);
    assert!(stderr(&args).contains("not descending"));
}

/// Ten models; model j misses every image when j < opacity / 40, so the
/// accuracy drop is fixed per opacity whatever images are sampled.
fn monotone_provider_dir(dir: &Path, manifest: &maskbench::corpus::CorpusManifest, conditions: &[(String, u32)]) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut clean: Vec<PredictionRecord> = Vec::new();
    for j in 0..10 {
        for e in &manifest.entries {
            clean.push(record(&mut rng, &format!("m{j}"), &e.image_id, &e.label, "clean", 1, false));
        }
    }
    write_predictions(&dir.join("clean.jsonl"), &clean).unwrap();
    for (cond, alpha) in conditions {
        let wrong = alpha / 40;
        let recs: Vec<PredictionRecord> = (0..10)
            .flat_map(|j| manifest.entries.iter().map(move |e| (j, e)))
            .map(|(j, e)| record(&mut rng, &format!("m{j}"), &e.image_id, &e.label, cond, if j < wrong { 2 } else { 1 }, false))
            .collect();
        write_predictions(&dir.join(format!("{cond}.jsonl")), &recs).unwrap();
    }
}

#[test]
fn search_smoke_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, manifest) = write_corpus(dir.path(), 8, 24, 24, 12);
    let preds = dir.path().join("preds");
    monotone_provider_dir(&preds, &manifest, &[("circle-d70-a0-s0".into(), 0)]);
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "shapes = [\"circle\"]\ndensities = [70]\nopacities = [0]\nsamples_per_combo = 5\n").unwrap();
    let run_search = |out: &Path| {
        run_ok(&["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider", s(&preds), "--out", s(out)])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let res = run_search(&a);
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
    run_search(&b);
    assert_eq!(tree_hashes(&a), tree_hashes(&b));
    let combos = std::fs::read_to_string(a.join("combos.jsonl")).unwrap();
    let row: serde_json::Value = serde_json::from_str(combos.lines().next().unwrap()).unwrap();
    assert_eq!(row["acc_diff"], 0.0);
    assert_eq!(row["selected"], false);
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("selection.json")).unwrap()).unwrap();
    assert!(sel["line"].is_null());

    std::fs::write(&grid, "shapes = [\"circle\"]\ndensities = [70]\nopacities = [0]\nepsilon = [0.1]\n").unwrap();
    assert_eq!(code(&["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider", s(&preds)]), 1);
}

#[test]
fn search_monotone_fixture_selects_above_bucket_line() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, manifest) = write_corpus(dir.path(), 10, 24, 24, 13);
    let opacities = [40u32, 80, 120, 160, 200];
    let mut conds = Vec::new();
    for shape in ["circle", "square"] {
        for d in [30, 70] {
            for a in opacities {
                conds.push((format!("{shape}-d{d}-a{a}-s0"), a));
            }
        }
    }
    let preds = dir.path().join("preds");
    monotone_provider_dir(&preds, &manifest, &conds);
    let grid = dir.path().join("grid.toml");
    std::fs::write(
        &grid,
        "shapes = [\"circle\", \"square\"]\ndensities = [30, 70]\nopacities = [40, 80, 120, 160, 200]\nsamples_per_combo = 5\nseed = 0\n",
    )
    .unwrap();
    let out = dir.path().join("s");
    run_ok(&["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider", s(&preds), "--out", s(&out)]);
    let combos: Vec<serde_json::Value> = std::fs::read_to_string(out.join("combos.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(combos.len(), 20);
    for c in &combos {
        assert_eq!(c["acc_diff"].as_f64().unwrap(), 10.0 * (c["opacity_alpha"].as_u64().unwrap() / 40) as f64);
    }
    // Best quality per 1-point bucket, then an ordinary least-squares line.
    let mut best: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for c in &combos {
        let (x, q) = (c["acc_diff"].as_f64().unwrap(), c["quality"].as_f64().unwrap());
        let e = best.entry(x.floor() as i64).or_insert((x, q));
        if q > e.1 {
            *e = (x, q);
        }
    }
    let pts: Vec<(f64, f64)> = best.values().copied().collect();
    let n = pts.len() as f64;
    let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert!((sel["line"]["slope"].as_f64().unwrap() - slope).abs() < 1e-9);
    assert!((sel["line"]["intercept"].as_f64().unwrap() - intercept).abs() < 1e-9);
    let mut any = false;
    for c in &combos {
        let (x, q) = (c["acc_diff"].as_f64().unwrap(), c["quality"].as_f64().unwrap());
        let above = q - (slope * x + intercept) > 1e-6;
        let below = q - (slope * x + intercept) < -1e-6;
        if above {
            assert_eq!(c["selected"], true, "{c}");
        }
        if below {
            assert_eq!(c["selected"], false, "{c}");
        }
        any |= c["selected"] == true;
    }
    assert!(any);
    assert!(sel["optima"].is_object());
}

#[test]
fn search_command_provider_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest_path, _) = write_corpus(dir.path(), 6, 16, 16, 14);
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "shapes = [\"knit\"]\ndensities = [70]\nopacities = [60, 180]\nsamples_per_combo = 5\n").unwrap();
    // Echo each index line back as a prediction; masked images are ranked 2nd.
    let cmd = r#"if [ {condition} = clean ]; then r=1; else r=2; fi; sed -e "s/\"path\":\"[^\"]*\"/\"model\":\"m\",\"topk\":[[\"a\",0.5],[\"b\",0.4],[\"c\",0.3],[\"d\",0.2],[\"e\",0.1]],\"gt_rank\":$r/" {index} > {out}"#;
    let out = dir.path().join("s");
    run_ok(&["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider-cmd", cmd, "--out", s(&out)]);
    let combos = std::fs::read_to_string(out.join("combos.jsonl")).unwrap();
    for l in combos.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["acc_diff"], 100.0);
    }
    assert!(out.join("work/knit-d70-a60-s0/images").is_dir());

    let fail = ["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider-cmd", "exit 4", "--out", s(&out)];
    assert_eq!(code(&fail), 2);
    assert!(stderr(&fail).contains("prediction provider failed"));
    let both = ["search", "--manifest", s(&manifest_path), "--grid", s(&grid), "--provider-cmd", "true", "--provider", "x"];
    assert_eq!(code(&both), 1);
}
