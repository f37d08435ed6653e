use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use maskbench::maskgen::MaskShape;
use maskbench::metrics::{QualityMode, QualityWeights};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "maskbench", version, about = "Geometric mask generation and classifier degradation analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GlobalArgs {
    /// TOML file with [global] and one section per subcommand; flags override it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for mask jitter and subsampling (default 0); overrides the grid seed in search.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MASKBENCH_JOBS")]
    pub jobs: Option<usize>,
    /// Base directory for outputs whose path is not given explicitly.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write masked copies of a corpus plus an index.
    Mask(MaskArgs),
    /// Score masked images against their originals.
    Score(ScoreArgs),
    /// Degradation tables from prediction files.
    Eval(EvalArgs),
    /// Trade-off scores and fit from (delta_rank, quality) points.
    Tradeoff(TradeoffArgs),
    /// Density/opacity grid search.
    Search(SearchArgs),
    /// Seeded subset of a manifest.
    Subsample(SubsampleArgs),
    /// Check files against the formats this tool reads.
    Validate(ValidateArgs),
}

/// `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub struct Size(pub u32, pub u32);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected WxH, got {s:?}");
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let w: u32 = w.trim().parse().map_err(|_| bad())?;
        let h: u32 = h.trim().parse().map_err(|_| bad())?;
        if w == 0 || h == 0 {
            return Err(format!("size must be at least 1x1, got {s:?}"));
        }
        Ok(Size(w, h))
    }
}

impl TryFrom<String> for Size {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// `r,g,b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub struct Rgb(pub [u8; 3]);

impl FromStr for Rgb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || format!("expected r,g,b with values 0..=255, got {s:?}");
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut out = [0u8; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| bad())?;
        }
        Ok(Rgb(out))
    }
}

impl TryFrom<String> for Rgb {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// `cosine,psnr,ssim,lpips`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct Weights(pub QualityWeights);

impl FromStr for Weights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("expected four comma-separated numbers, got {s:?}"))?;
        let [cosine, psnr, ssim, lpips] = v[..] else {
            return Err(format!("expected four comma-separated numbers, got {s:?}"));
        };
        let w = QualityWeights { cosine, psnr, ssim, lpips };
        w.validate().map_err(|e| e.to_string())?;
        Ok(Weights(w))
    }
}

impl TryFrom<String> for Weights {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

fn parse_mode(s: &str) -> Result<QualityMode, String> {
    s.parse().map_err(|e: maskbench::Error| e.to_string())
}

fn parse_shape(s: &str) -> Result<MaskShape, String> {
    s.parse().map_err(|e: maskbench::Error| e.to_string())
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MaskArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// One or more of circle, diamond, square, knit.
    #[arg(long, value_delimiter = ',', value_parser = parse_shape)]
    pub shape: Option<Vec<MaskShape>>,
    /// 0..=100; comma list allowed.
    #[arg(long, value_delimiter = ',')]
    pub density: Option<Vec<u32>>,
    /// Overlay opacity 0..=255; comma list allowed.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<u32>>,
    /// Overlay color as r,g,b (default 0,0,0).
    #[arg(long)]
    pub color: Option<Rgb>,
    /// Resize inputs to WxH before masking.
    #[arg(long)]
    pub resize: Option<Size>,
    /// Seeded per-shape offsets.
    #[arg(long)]
    pub jitter: bool,
    /// Output directory (default <out-dir>/masked).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub masked_index: Option<PathBuf>,
    /// JSONL of {image_id, condition, lpips}.
    #[arg(long)]
    pub lpips_sidecar: Option<PathBuf>,
    /// Resize originals to WxH before comparing (use the size given to mask).
    #[arg(long)]
    pub resize: Option<Size>,
    /// Composite weights cosine,psnr,ssim,lpips (default 0.15,0.25,0.35,0.25).
    #[arg(long)]
    pub weights: Option<Weights>,
    /// Output JSONL (default <out-dir>/quality.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// JSONL with image_id and label per line; a manifest works.
    #[arg(long)]
    pub truths: Option<PathBuf>,
    #[arg(long)]
    pub clean_preds: Option<PathBuf>,
    /// One or more files; repeat the flag or separate with commas.
    #[arg(long, value_delimiter = ',')]
    pub masked_preds: Option<Vec<PathBuf>>,
    /// Only images every model ranks first when clean.
    #[arg(long)]
    pub all_correct: bool,
    /// Quality JSONL from `score`; enables the trade-off outputs.
    #[arg(long)]
    pub quality: Option<PathBuf>,
    /// composite or three-metric.
    #[arg(long, value_parser = parse_mode)]
    pub quality_mode: Option<QualityMode>,
    /// Output directory (default <out-dir>/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TradeoffArgs {
    /// CSV with mask,opacity_alpha,delta_rank,quality columns.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Output directory (default <out-dir>/tradeoff).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SearchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Grid TOML.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Directory of <condition>.jsonl prediction files.
    #[arg(long, conflicts_with = "provider_cmd")]
    pub provider: Option<PathBuf>,
    /// Shell command run per condition with {condition}, {images}, {index} and {out}.
    #[arg(long)]
    pub provider_cmd: Option<String>,
    /// Scratch directory for the command provider (default <out>/work).
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Output directory (default <out-dir>/search).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SubsampleArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Output manifest (default <out-dir>/subsample.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ValidateArgs {
    /// Manifest; every image is decoded.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<Vec<PathBuf>>,
    /// Checks predictions against these labels.
    #[arg(long)]
    pub truths: Option<PathBuf>,
    #[arg(long)]
    pub lpips: Option<PathBuf>,
    #[arg(long)]
    pub quality: Option<PathBuf>,
    #[arg(long)]
    pub masked_index: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub global: GlobalArgs,
    pub mask: MaskArgs,
    pub score: ScoreArgs,
    pub eval: EvalArgs,
    pub tradeoff: TradeoffArgs,
    pub search: SearchArgs,
    pub subsample: SubsampleArgs,
    pub validate: ValidateArgs,
}

pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Fills every unset option from the config value; flags win.
pub trait Merge {
    fn merge(&mut self, file: Self);
}

macro_rules! merge_impl {
    ($ty:ty; $($opt:ident),* $(; $($flag:ident),*)?) => {
        impl Merge for $ty {
            fn merge(&mut self, file: Self) {
                $( if self.$opt.is_none() { self.$opt = file.$opt; } )*
                $($( self.$flag |= file.$flag; )*)?
            }
        }
    };
}

merge_impl!(GlobalArgs; seed, jobs, out_dir);
merge_impl!(MaskArgs; manifest, shape, density, alpha, color, resize, out; jitter);
merge_impl!(ScoreArgs; manifest, masked_index, lpips_sidecar, resize, weights, out);
merge_impl!(EvalArgs; truths, clean_preds, masked_preds, quality, quality_mode, out; all_correct);
merge_impl!(TradeoffArgs; points, out);
merge_impl!(SearchArgs; manifest, grid, provider, provider_cmd, work_dir, out);
merge_impl!(SubsampleArgs; manifest, n, out);
merge_impl!(ValidateArgs; manifest, predictions, truths, lpips, quality, masked_index);

impl Cli {
    /// Applies the config file named by `--config`, if any.
    pub fn merge_config(&mut self) -> Result<(), CliError> {
        let Some(path) = self.global.config.clone() else {
            return Ok(());
        };
        let file = load_config(&path)?;
        self.global.merge(file.global);
        match &mut self.command {
            Cmd::Mask(a) => a.merge(file.mask),
            Cmd::Score(a) => a.merge(file.score),
            Cmd::Eval(a) => a.merge(file.eval),
            Cmd::Tradeoff(a) => a.merge(file.tradeoff),
            Cmd::Search(a) => a.merge(file.search),
            Cmd::Subsample(a) => a.merge(file.subsample),
            Cmd::Validate(a) => a.merge(file.validate),
        }
        Ok(())
    }
}

pub fn required<T>(value: Option<T>, section: &str, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{section}: --{flag} is required (flag or config key {flag:?})")))
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}
