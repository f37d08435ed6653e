//! Classifier degradation statistics from prediction files.
//!
//! Every record carries the ground-truth rank in the model's full descending
//! ranking (ties take the worst rank) and, optionally, the ground-truth
//! score. Accuracy deltas are `clean - masked` so positive values mean
//! degradation; rank deltas are `rank_clean - rank_masked` so negative values
//! mean degradation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::maskgen::{parse_condition_id, ConditionKey, MaskShape, CLEAN};
use crate::metrics::{three_metric_quality, QualityMode, QualityReport};
use crate::regression::{fit_polynomial, PolyFit};

const SCORE_TOLERANCE: f64 = 1e-9;
pub const MIN_TOPK: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model: String,
    pub image_id: String,
    pub condition: String,
    /// `(class, score)` pairs in descending score order.
    pub topk: Vec<(String, f64)>,
    /// 1-based position of the ground truth in the full ranking.
    pub gt_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_score: Option<f64>,
}

/// Why a record failed validation, before it is bound to a file location.
enum RecordProblem {
    NotDescending,
    Invalid(String),
}

impl PredictionRecord {
    fn check(&self) -> std::result::Result<(), RecordProblem> {
        if self.topk.len() < MIN_TOPK {
            return Err(RecordProblem::Invalid(format!(
                "topk has {} entries, expected at least {MIN_TOPK}",
                self.topk.len()
            )));
        }
        if self.topk.iter().any(|(_, s)| !s.is_finite()) {
            return Err(RecordProblem::Invalid("topk scores must be finite".into()));
        }
        if self.topk.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(RecordProblem::NotDescending);
        }
        if self.gt_rank == 0 {
            return Err(RecordProblem::Invalid("gt_rank must be at least 1".into()));
        }
        if let Some(s) = self.gt_score {
            if !s.is_finite() {
                return Err(RecordProblem::Invalid("gt_score must be finite".into()));
            }
            let r = self.gt_rank as usize;
            if r <= self.topk.len() {
                if (self.topk[r - 1].1 - s).abs() > SCORE_TOLERANCE {
                    return Err(RecordProblem::Invalid(format!(
                        "gt_score {s} differs from the score {} at gt_rank {r}",
                        self.topk[r - 1].1
                    )));
                }
            } else if s > self.topk[self.topk.len() - 1].1 + SCORE_TOLERANCE {
                return Err(RecordProblem::Invalid(format!(
                    "gt_score {s} outranks the top-k list but gt_rank is {r}"
                )));
            }
        }
        Ok(())
    }

    fn key(&self) -> (String, String, String) {
        (self.model.clone(), self.image_id.clone(), self.condition.clone())
    }

    pub fn is_clean(&self) -> bool {
        self.condition == CLEAN
    }
}

/// Validated records with unique `(model, image_id, condition)` keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        Self::build(records, Path::new("<memory>"), None)
    }

    fn build(records: Vec<PredictionRecord>, path: &Path, lines: Option<&[usize]>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = lines.map_or(i + 1, |l| l[i]);
            match r.check() {
                Ok(()) => {}
                Err(RecordProblem::NotDescending) => {
                    return Err(Error::Monotonicity {
                        path: path.to_path_buf(),
                        line,
                    })
                }
                Err(RecordProblem::Invalid(message)) => return Err(Error::format(path, line, message)),
            }
            if !seen.insert(r.key()) {
                return Err(Error::DuplicateKey {
                    model: r.model.clone(),
                    image_id: r.image_id.clone(),
                    condition: r.condition.clone(),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: PredictionSet) -> Result<()> {
        let mut all = std::mem::take(&mut self.records);
        all.extend(other.records);
        *self = Self::new(all)?;
        Ok(())
    }

    pub fn condition(&self, condition: &str) -> impl Iterator<Item = &PredictionRecord> {
        let condition = condition.to_string();
        self.records.iter().filter(move |r| r.condition == condition)
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.model.as_str()).collect()
    }
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (no, value) in jsonl::read_values(path)? {
        let r: PredictionRecord =
            serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
        records.push(r);
        lines.push(no);
    }
    PredictionSet::build(records, path, Some(&lines))
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    jsonl::write_lines(path, None, records)
}

/// Ground-truth label per image_id.
pub type Truths = HashMap<String, String>;

/// Reads `image_id`/`label` pairs from JSON lines (a corpus manifest works).
pub fn load_truths(path: impl AsRef<Path>) -> Result<Truths> {
    #[derive(Deserialize)]
    struct Row {
        image_id: String,
        label: String,
    }
    let path = path.as_ref();
    let mut out = Truths::new();
    for (no, value) in jsonl::read_values(path)? {
        let row: Row = serde_json::from_value(value).map_err(|e| Error::format(path, no, e.to_string()))?;
        if out.insert(row.image_id.clone(), row.label).is_some() {
            return Err(Error::DuplicateId(row.image_id));
        }
    }
    Ok(out)
}

/// Checks that every record has a label and that its `gt_rank`/`gt_score`
/// agree with the label's position in `topk` under worst-rank tie-breaking.
pub fn verify_truths(set: &PredictionSet, truths: &Truths) -> Result<()> {
    for r in &set.records {
        let label = truths
            .get(&r.image_id)
            .ok_or_else(|| Error::MissingTruth(r.image_id.clone()))?;
        let inconsistent = |message: String| Error::Inconsistent {
            model: r.model.clone(),
            image_id: r.image_id.clone(),
            condition: r.condition.clone(),
            message,
        };
        let rank = r.gt_rank as usize;
        match r.topk.iter().position(|(c, _)| c == label) {
            Some(i) => {
                let s = r.topk[i].1;
                let at_or_above = r.topk.iter().filter(|(_, t)| *t >= s).count();
                let ok = if at_or_above < r.topk.len() {
                    rank == at_or_above
                } else {
                    rank >= at_or_above
                };
                if !ok {
                    return Err(inconsistent(format!(
                        "label {label:?} is listed at position {} but gt_rank is {rank}",
                        i + 1
                    )));
                }
                if let Some(g) = r.gt_score {
                    if (g - s).abs() > SCORE_TOLERANCE {
                        return Err(inconsistent(format!("gt_score {g} differs from listed score {s}")));
                    }
                }
            }
            None if rank <= r.topk.len() => {
                return Err(inconsistent(format!(
                    "label {label:?} is missing from topk but gt_rank is {rank}"
                )));
            }
            None => {}
        }
    }
    Ok(())
}

/// Fraction of records whose ground truth ranks within the top `k`.
pub fn acc_at_k<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>, truths: &Truths, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Range("k must be at least 1".into()));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for r in records {
        if !truths.contains_key(&r.image_id) {
            return Err(Error::MissingTruth(r.image_id.clone()));
        }
        total += 1;
        hits += (r.gt_rank <= k) as usize;
    }
    if total == 0 {
        return Err(Error::EmptySample("Acc@k of an empty record set".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Percentage-point difference `100 * (clean - masked) / n` from hit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PointDelta {
    pub clean_hits: usize,
    pub masked_hits: usize,
    pub n: usize,
}

impl PointDelta {
    pub fn value(&self) -> f64 {
        100.0 * (self.clean_hits as f64 - self.masked_hits as f64) / self.n as f64
    }

    /// Hundredths of a point, rounded half-up with exact integer arithmetic.
    pub fn hundredths(&self) -> i64 {
        let diff = self.clean_hits as i64 - self.masked_hits as i64;
        let n = self.n as i64;
        (20_000 * diff + n).div_euclid(2 * n)
    }
}

/// Formats hundredths as a fixed two-decimal string.
pub fn format_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

/// Two-decimal half-up formatting for a float.
pub fn format_two_decimals(x: f64) -> String {
    // Snap away binary noise such as 1.005 * 100 = 100.49999999999999.
    let scaled = (x * 100.0 * 1e6).round() / 1e6;
    format_hundredths((scaled + 0.5).floor() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub model: String,
    pub condition: String,
    pub acc1: f64,
    pub acc5: f64,
    pub n: usize,
}

/// Acc@1 and Acc@5 per `(model, condition)` over all records of `sets`.
pub fn accuracy_table(sets: &[&PredictionSet], truths: &Truths) -> Result<Vec<AccuracyRow>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&PredictionRecord>> = BTreeMap::new();
    for set in sets {
        for r in &set.records {
            groups.entry((r.model.as_str(), r.condition.as_str())).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((model, condition), recs)| {
            Ok(AccuracyRow {
                model: model.to_string(),
                condition: condition.to_string(),
                acc1: acc_at_k(recs.iter().copied(), truths, 1)?,
                acc5: acc_at_k(recs.iter().copied(), truths, 5)?,
                n: recs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub mask: MaskShape,
    pub opacity_alpha: u32,
    pub condition: String,
    pub acc1: PointDelta,
    pub acc5: PointDelta,
    pub delta_acc1: f64,
    pub delta_acc5: f64,
    pub mean_delta_rank: f64,
    /// `None` when any matched record lacks `gt_score`.
    pub mean_conf_drop: Option<f64>,
    pub n_images: usize,
}

type Pair<'a> = (&'a PredictionRecord, &'a PredictionRecord);

/// Masked conditions by `(mask, opacity)`; one condition id per key.
fn masked_conditions(masked: &PredictionSet) -> Result<BTreeMap<(MaskShape, u32), (String, ConditionKey)>> {
    let mut out: BTreeMap<(MaskShape, u32), (String, ConditionKey)> = BTreeMap::new();
    let ids: BTreeSet<&str> = masked
        .records
        .iter()
        .filter(|r| !r.is_clean())
        .map(|r| r.condition.as_str())
        .collect();
    for id in ids {
        let key = parse_condition_id(id)?.expect("clean records filtered");
        let slot = (key.shape, key.opacity_alpha);
        if let Some((existing, _)) = out.get(&slot) {
            return Err(Error::AmbiguousCondition {
                shape: key.shape.to_string(),
                opacity_alpha: key.opacity_alpha,
                first: existing.clone(),
                second: id.to_string(),
            });
        }
        out.insert(slot, (id.to_string(), key));
    }
    Ok(out)
}

type PairsByCondition<'a> = BTreeMap<(MaskShape, u32), (String, Vec<Pair<'a>>)>;

/// Matches masked records to clean records of the same model and image.
/// Pairs are sorted by `(model, image_id)` so every reduction sums in a fixed order.
fn pairs_by_condition<'a>(
    clean: &'a PredictionSet,
    masked: &'a PredictionSet,
    allowed: Option<&BTreeSet<&str>>,
) -> Result<PairsByCondition<'a>> {
    let clean_map: HashMap<(&str, &str), &PredictionRecord> = clean
        .records
        .iter()
        .filter(|r| r.is_clean())
        .map(|r| ((r.model.as_str(), r.image_id.as_str()), r))
        .collect();
    let conditions = masked_conditions(masked)?;
    let mut out = BTreeMap::new();
    for (slot, (id, _)) in conditions {
        let mut pairs: Vec<Pair> = masked
            .records
            .iter()
            .filter(|m| m.condition == id)
            .filter(|m| allowed.is_none_or(|a| a.contains(m.image_id.as_str())))
            .filter_map(|m| clean_map.get(&(m.model.as_str(), m.image_id.as_str())).map(|c| (*c, m)))
            .collect();
        pairs.sort_by(|a, b| (&a.1.model, &a.1.image_id).cmp(&(&b.1.model, &b.1.image_id)));
        out.insert(slot, (id, pairs));
    }
    Ok(out)
}

/// Images ranked first by every model in the clean condition.
pub fn all_correct_images(clean: &PredictionSet) -> BTreeSet<&str> {
    let clean_recs: Vec<&PredictionRecord> = clean.records.iter().filter(|r| r.is_clean()).collect();
    let models: BTreeSet<&str> = clean_recs.iter().map(|r| r.model.as_str()).collect();
    let mut correct: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &clean_recs {
        if r.gt_rank == 1 {
            *correct.entry(r.image_id.as_str()).or_default() += 1;
        }
    }
    correct
        .into_iter()
        .filter(|(_, c)| *c == models.len())
        .map(|(id, _)| id)
        .collect()
}

fn mean_conf_drop(pairs: &[Pair]) -> Option<f64> {
    let mut sum = 0.0;
    for (c, m) in pairs {
        sum += c.gt_score? - m.gt_score?;
    }
    Some(100.0 * sum / pairs.len() as f64)
}

fn mean_rank_delta(pairs: &[Pair]) -> f64 {
    let sum: i64 = pairs.iter().map(|(c, m)| c.gt_rank as i64 - m.gt_rank as i64).sum();
    sum as f64 / pairs.len() as f64
}

/// Accuracy deltas per `(model, mask, opacity)`. With `restrict_all_correct`
/// only images every model ranks first in the clean condition are used.
/// Records with condition `"clean"` in `masked` are ignored, so one combined
/// file may be passed for both sets.
pub fn delta_acc_table(clean: &PredictionSet, masked: &PredictionSet, restrict_all_correct: bool) -> Result<Vec<EvalRow>> {
    let allowed = restrict_all_correct.then(|| all_correct_images(clean));
    let groups = pairs_by_condition(clean, masked, allowed.as_ref())?;
    let models: BTreeSet<&str> = masked.records.iter().filter(|r| !r.is_clean()).map(|r| r.model.as_str()).collect();
    let mut rows = Vec::new();
    for ((shape, alpha), (id, pairs)) in &groups {
        for model in &models {
            let mine: Vec<Pair> = pairs.iter().filter(|(c, _)| c.model == *model).copied().collect();
            let has_records = masked.records.iter().any(|r| r.condition == *id && r.model == *model);
            if !has_records {
                continue;
            }
            if mine.is_empty() {
                return Err(Error::EmptyIntersection(format!("model {model:?}, condition {id:?}")));
            }
            let count = |k: u32, masked_side: bool| {
                mine.iter()
                    .filter(|(c, m)| if masked_side { m.gt_rank <= k } else { c.gt_rank <= k })
                    .count()
            };
            let n = mine.len();
            let acc1 = PointDelta { clean_hits: count(1, false), masked_hits: count(1, true), n };
            let acc5 = PointDelta { clean_hits: count(5, false), masked_hits: count(5, true), n };
            rows.push(EvalRow {
                model: model.to_string(),
                mask: *shape,
                opacity_alpha: *alpha,
                condition: id.clone(),
                acc1,
                acc5,
                delta_acc1: acc1.value(),
                delta_acc5: acc5.value(),
                mean_delta_rank: mean_rank_delta(&mine),
                mean_conf_drop: mean_conf_drop(&mine),
                n_images: n,
            });
        }
    }
    rows.sort_by(|a, b| (&a.model, a.mask, a.opacity_alpha).cmp(&(&b.model, b.mask, b.opacity_alpha)));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankDeltaRow {
    pub mask: MaskShape,
    pub opacity_alpha: u32,
    pub condition: String,
    /// Mean of `rank_clean - rank_masked` across models and images.
    pub mean_delta_rank: f64,
    pub n_pairs: usize,
}

/// Rank change per `(mask, opacity)` pooled over models.
pub fn rank_delta(clean: &PredictionSet, masked: &PredictionSet, restrict_all_correct: bool) -> Result<Vec<RankDeltaRow>> {
    let allowed = restrict_all_correct.then(|| all_correct_images(clean));
    pairs_by_condition(clean, masked, allowed.as_ref())?
        .into_iter()
        .map(|((mask, opacity_alpha), (condition, pairs))| {
            if pairs.is_empty() {
                return Err(Error::EmptyIntersection(format!("condition {condition:?}")));
            }
            Ok(RankDeltaRow {
                mask,
                opacity_alpha,
                mean_delta_rank: mean_rank_delta(&pairs),
                n_pairs: pairs.len(),
                condition,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfDropRow {
    pub model: String,
    pub mask: MaskShape,
    pub opacity_alpha: u32,
    pub condition: String,
    /// Mean of `(score_clean - score_masked) * 100`; negative when confidence rose.
    pub mean_conf_drop: f64,
    pub n_images: usize,
}

pub fn confidence_drop(clean: &PredictionSet, masked: &PredictionSet) -> Result<Vec<ConfDropRow>> {
    let mut rows = Vec::new();
    for ((mask, alpha), (id, pairs)) in pairs_by_condition(clean, masked, None)? {
        let mut by_model: BTreeMap<&str, Vec<Pair>> = BTreeMap::new();
        for p in &pairs {
            by_model.entry(p.0.model.as_str()).or_default().push(*p);
        }
        if by_model.is_empty() {
            return Err(Error::EmptyIntersection(format!("condition {id:?}")));
        }
        for (model, mine) in by_model {
            for (c, m) in &mine {
                for r in [c, m] {
                    if r.gt_score.is_none() {
                        return Err(Error::MissingField {
                            model: r.model.clone(),
                            image_id: r.image_id.clone(),
                            condition: r.condition.clone(),
                            field: "gt_score",
                        });
                    }
                }
            }
            rows.push(ConfDropRow {
                model: model.to_string(),
                mask,
                opacity_alpha: alpha,
                condition: id.clone(),
                mean_conf_drop: mean_conf_drop(&mine).expect("scores checked"),
                n_images: mine.len(),
            });
        }
    }
    rows.sort_by(|a, b| (&a.model, a.mask, a.opacity_alpha).cmp(&(&b.model, b.mask, b.opacity_alpha)));
    Ok(rows)
}

/// Attack strength against visual fidelity for one `(mask, opacity)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub mask: MaskShape,
    pub opacity_alpha: u32,
    pub delta_rank: f64,
    pub quality: f64,
    /// `quality - delta_rank`.
    pub score: f64,
}

impl TradeoffPoint {
    pub fn new(mask: MaskShape, opacity_alpha: u32, delta_rank: f64, quality: f64) -> Self {
        Self {
            mask,
            opacity_alpha,
            delta_rank,
            quality,
            score: quality - delta_rank,
        }
    }
}

/// Joins rank deltas with mean quality for the same condition.
/// `Composite` uses each row's stored composite; `ThreeMetric` recomputes
/// the unweighted mean of normalized cosine, PSNR and SSIM.
pub fn tradeoff_points(rank_deltas: &[RankDeltaRow], quality: &[QualityReport], mode: QualityMode) -> Result<Vec<TradeoffPoint>> {
    let mut by_condition: BTreeMap<&str, Vec<&QualityReport>> = BTreeMap::new();
    for q in quality {
        by_condition.entry(q.condition.as_str()).or_default().push(q);
    }
    let mut points = Vec::with_capacity(rank_deltas.len());
    for row in rank_deltas {
        let mut reports = by_condition
            .get(row.condition.as_str())
            .cloned()
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::EmptyIntersection(format!("no quality rows for condition {:?}", row.condition)))?;
        reports.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let sum: f64 = reports
            .iter()
            .map(|q| match mode {
                QualityMode::Composite => q.composite,
                QualityMode::ThreeMetric => three_metric_quality(&q.components()),
            })
            .sum();
        points.push(TradeoffPoint::new(
            row.mask,
            row.opacity_alpha,
            row.mean_delta_rank,
            sum / reports.len() as f64,
        ));
    }
    Ok(points)
}

/// Degree-2 least-squares curve of quality against rank change.
pub fn fit_tradeoff(points: &[TradeoffPoint]) -> Result<PolyFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.delta_rank, p.quality)).collect();
    fit_polynomial(&xy, 2)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(PathBuf::from(path), std::io::Error::other(e.to_string()))
}

/// `model,condition,acc1,acc5,n` with accuracies in percent.
pub fn write_accuracy_table(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["model", "condition", "acc1", "acc5", "n"]).map_err(e)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.condition.clone(),
            format_two_decimals(100.0 * r.acc1),
            format_two_decimals(100.0 * r.acc5),
            r.n.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// `model,mask,opacity_alpha,delta_acc1,delta_acc5,mean_conf_drop,n`.
pub fn write_delta_table(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["model", "mask", "opacity_alpha", "delta_acc1", "delta_acc5", "mean_conf_drop", "n"])
        .map_err(e)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.mask.to_string(),
            r.opacity_alpha.to_string(),
            format_hundredths(r.acc1.hundredths()),
            format_hundredths(r.acc5.hundredths()),
            r.mean_conf_drop.map(format_two_decimals).unwrap_or_default(),
            r.n_images.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// `mask,opacity_alpha,delta_rank,n`.
pub fn write_rank_table(path: &Path, rows: &[RankDeltaRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["mask", "opacity_alpha", "delta_rank", "n"]).map_err(e)?;
    for r in rows {
        w.write_record([
            r.mask.to_string(),
            r.opacity_alpha.to_string(),
            r.mean_delta_rank.to_string(),
            r.n_pairs.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// `mask,opacity_alpha,delta_rank,quality,score`.
pub fn write_tradeoff(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["mask", "opacity_alpha", "delta_rank", "quality", "score"]).map_err(e)?;
    for p in points {
        w.write_record([
            p.mask.to_string(),
            p.opacity_alpha.to_string(),
            p.delta_rank.to_string(),
            p.quality.to_string(),
            p.score.to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

pub fn load_tradeoff(path: impl AsRef<Path>) -> Result<Vec<TradeoffPoint>> {
    #[derive(Deserialize)]
    struct Row {
        mask: MaskShape,
        opacity_alpha: u32,
        delta_rank: f64,
        quality: f64,
    }
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::format(path, i + 2, e.to_string()))?;
            Ok(TradeoffPoint::new(row.mask, row.opacity_alpha, row.delta_rank, row.quality))
        })
        .collect()
}
