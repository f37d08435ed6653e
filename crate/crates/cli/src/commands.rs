use std::path::{Path, PathBuf};

use maskbench::corpus::{load_manifest, subsample};
use maskbench::eval::{
    accuracy_table, delta_acc_table, fit_tradeoff, load_predictions, load_tradeoff, load_truths, rank_delta,
    tradeoff_points, verify_truths, write_accuracy_table, write_delta_table, write_rank_table, write_tradeoff,
    PredictionSet, TradeoffPoint,
};
use maskbench::maskgen::{load_masked_index, write_masked_tree, MaskSpec, INDEX_FILE};
use maskbench::metrics::{load_quality_reports, score_index, write_quality_reports, LpipsSidecar, QualityMode};
use maskbench::search::{
    report_optima, run_grid, select_above_regression, CommandProvider, DirectoryProvider, GridSpec, PredictionProvider,
};
use maskbench::Error;
use serde_json::json;

use crate::args::{required, Cli, Cmd, EvalArgs, MaskArgs, ScoreArgs, SearchArgs, SubsampleArgs, TradeoffArgs, ValidateArgs};
use crate::CliError;

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out_dir = cli.global.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.global.seed;
    match &cli.command {
        Cmd::Mask(a) => mask(a, seed.unwrap_or(0), &out_dir),
        Cmd::Score(a) => score(a, &out_dir),
        Cmd::Eval(a) => eval(a, &out_dir),
        Cmd::Tradeoff(a) => tradeoff(a, &out_dir),
        Cmd::Search(a) => search(a, seed, &out_dir),
        Cmd::Subsample(a) => subsample_cmd(a, seed.unwrap_or(0), &out_dir),
        Cmd::Validate(a) => validate(a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Data(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mask(a: &MaskArgs, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let manifest_path = required(a.manifest.as_ref(), "mask", "manifest")?;
    let shapes = required(a.shape.as_ref(), "mask", "shape")?;
    let densities = required(a.density.as_ref(), "mask", "density")?;
    let alphas = required(a.alpha.as_ref(), "mask", "alpha")?;
    let color = a.color.map(|c| c.0).unwrap_or([0, 0, 0]);
    let mut specs = Vec::new();
    for &shape in shapes {
        for &d in densities {
            for &alpha in alphas {
                let spec = MaskSpec::new(shape, d, alpha)
                    .with_color(color)
                    .with_seed(seed)
                    .with_jitter(a.jitter);
                spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
    }
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("masked"));
    let manifest = load_manifest(manifest_path)?;
    let (_, summaries) = write_masked_tree(&manifest, &specs, a.resize.map(|s| (s.0, s.1)), &out)?;
    println!("condition\timages\tmean_coverage");
    for s in summaries {
        println!("{}\t{}\t{:.6}", s.condition, s.images, s.mean_coverage);
    }
    eprintln!("wrote {}", out.join(INDEX_FILE).display());
    Ok(())
}

fn score(a: &ScoreArgs, out_dir: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(required(a.manifest.as_ref(), "score", "manifest")?)?;
    let index = load_masked_index(required(a.masked_index.as_ref(), "score", "masked-index")?)?;
    let weights = a.weights.map(|w| w.0).unwrap_or_default();
    let sidecar = a.lpips_sidecar.as_ref().map(LpipsSidecar::load).transpose()?;
    let reports = score_index(&manifest, &index, a.resize.map(|s| (s.0, s.1)), &weights, sidecar.as_ref())?;
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("quality.jsonl"));
    write_quality_reports(&out, &weights, &reports)?;
    eprintln!("wrote {} rows to {}", reports.len(), out.display());
    Ok(())
}

fn fit_json(points: &[TradeoffPoint]) -> serde_json::Value {
    match fit_tradeoff(points) {
        Ok(fit) => json!({ "x": "delta_rank", "y": "quality", "fit": fit }),
        Err(e) => {
            eprintln!("maskbench: warning: trade-off fit skipped: {e}");
            json!({ "x": "delta_rank", "y": "quality", "fit": null, "reason": e.to_string() })
        }
    }
}

fn write_tradeoff_outputs(out: &Path, points: &[TradeoffPoint]) -> Result<(), CliError> {
    write_tradeoff(&out.join("tradeoff.csv"), points)?;
    write_json(&out.join("tradeoff_fit.json"), &fit_json(points))
}

fn eval(a: &EvalArgs, out_dir: &Path) -> Result<(), CliError> {
    let truths = load_truths(required(a.truths.as_ref(), "eval", "truths")?)?;
    let clean = load_predictions(required(a.clean_preds.as_ref(), "eval", "clean-preds")?)?;
    let mut masked = PredictionSet::default();
    for p in required(a.masked_preds.as_ref(), "eval", "masked-preds")? {
        masked.extend(load_predictions(p)?)?;
    }
    verify_truths(&clean, &truths)?;
    verify_truths(&masked, &truths)?;

    let out = a.out.clone().unwrap_or_else(|| out_dir.join("eval"));
    write_accuracy_table(&out.join("accuracy.csv"), &accuracy_table(&[&clean, &masked], &truths)?)?;
    let delta = delta_acc_table(&clean, &masked, a.all_correct)?;
    write_delta_table(&out.join("delta_acc.csv"), &delta)?;
    let ranks = rank_delta(&clean, &masked, a.all_correct)?;
    write_rank_table(&out.join("rank_delta.csv"), &ranks)?;
    if let Some(q) = &a.quality {
        let reports = load_quality_reports(q)?;
        let points = tradeoff_points(&ranks, &reports, a.quality_mode.unwrap_or(QualityMode::Composite))?;
        write_tradeoff_outputs(&out, &points)?;
    }
    eprintln!("wrote tables to {}", out.display());
    Ok(())
}

fn tradeoff(a: &TradeoffArgs, out_dir: &Path) -> Result<(), CliError> {
    let points = load_tradeoff(required(a.points.as_ref(), "tradeoff", "points")?)?;
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("tradeoff"));
    write_tradeoff_outputs(&out, &points)?;
    println!("mask\topacity_alpha\tscore");
    for p in &points {
        println!("{}\t{}\t{:.2}", p.mask, p.opacity_alpha, p.score);
    }
    Ok(())
}

fn search(a: &SearchArgs, seed: Option<u64>, out_dir: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(required(a.manifest.as_ref(), "search", "manifest")?)?;
    let grid_path = required(a.grid.as_ref(), "search", "grid")?;
    let text = std::fs::read_to_string(grid_path).map_err(|e| io_error(grid_path, e))?;
    let mut grid: GridSpec =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", grid_path.display())))?;
    if let Some(s) = seed {
        grid.seed = s;
    }
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let out = a.out.clone().unwrap_or_else(|| out_dir.join("search"));
    let provider: Box<dyn PredictionProvider> = match (&a.provider, &a.provider_cmd) {
        (Some(dir), None) => Box::new(DirectoryProvider::new(dir)),
        (None, Some(cmd)) => Box::new(CommandProvider::new(
            cmd.clone(),
            a.work_dir.clone().unwrap_or_else(|| out.join("work")),
        )),
        _ => return Err(CliError::Usage("search: give exactly one of --provider or --provider-cmd".into())),
    };
    let mut results = run_grid(&grid, &manifest, provider.as_ref())?;

    let mut summary = serde_json::Map::new();
    match select_above_regression(&mut results) {
        Ok(line) => {
            summary.insert("line".into(), json!(line));
            match report_optima(&results) {
                Ok(optima) => {
                    summary.insert("optima".into(), json!(optima));
                }
                Err(e) => {
                    eprintln!("maskbench: warning: {e}");
                    summary.insert("optima".into(), json!(null));
                    summary.insert("reason".into(), json!(e.to_string()));
                }
            }
        }
        Err(Error::Underdetermined(msg)) => {
            eprintln!("maskbench: warning: selection skipped: {msg}");
            summary.insert("line".into(), json!(null));
            summary.insert("optima".into(), json!(null));
            summary.insert("reason".into(), json!(format!("underdetermined fit: {msg}")));
        }
        Err(e) => return Err(e.into()),
    }
    maskbench::jsonl::write_lines(&out.join("combos.jsonl"), None, &results)?;
    let summary = serde_json::Value::Object(summary);
    write_json(&out.join("selection.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?);
    Ok(())
}

fn subsample_cmd(a: &SubsampleArgs, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let path = required(a.manifest.as_ref(), "subsample", "manifest")?;
    let n = required(a.n, "subsample", "n")?;
    let manifest = load_manifest(path)?;
    let mut picked = subsample(&manifest, n, seed)?;
    if let Some(h) = picked.header.as_mut() {
        h.parent = Some(path.to_string_lossy().into_owned());
    }
    let out = a.out.clone().unwrap_or_else(|| out_dir.join("subsample.jsonl"));
    picked.save(&out)?;
    eprintln!("wrote {} entries to {}", picked.len(), out.display());
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let mut checked = 0;
    if let Some(p) = &a.manifest {
        let m = load_manifest(p)?;
        m.validate()?;
        println!("ok manifest {} ({} images)", p.display(), m.len());
        checked += 1;
    }
    let truths = a.truths.as_ref().map(load_truths).transpose()?;
    for p in a.predictions.iter().flatten() {
        let set = load_predictions(p)?;
        if let Some(t) = &truths {
            verify_truths(&set, t)?;
        }
        println!("ok predictions {} ({} records)", p.display(), set.len());
        checked += 1;
    }
    if let Some(p) = &a.lpips {
        LpipsSidecar::load(p)?;
        println!("ok lpips {}", p.display());
        checked += 1;
    }
    if let Some(p) = &a.quality {
        let rows = load_quality_reports(p)?;
        println!("ok quality {} ({} rows)", p.display(), rows.len());
        checked += 1;
    }
    if let Some(p) = &a.masked_index {
        let index = load_masked_index(p)?;
        for e in &index.entries {
            let path = index.resolve(e);
            if !path.is_file() {
                return Err(Error::Io {
                    path,
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                }
                .into());
            }
        }
        println!("ok masked index {} ({} entries)", p.display(), index.entries.len());
        checked += 1;
    }
    if checked == 0 {
        return Err(CliError::Usage("validate: nothing to check".into()));
    }
    Ok(())
}
