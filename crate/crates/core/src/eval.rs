//! Scoring, aggregation, failure taxonomy and report rendering.
//!
//! Every metric is computed per sample first and then aggregated per
//! benchmark category and overall. Overall cells are sample-weighted; cIoU
//! overall is recomputed from cumulative intersections and unions rather
//! than averaged over categories.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Task, TaskSample};
use crate::error::{Error, Result};
use crate::exec::map_collect;
use crate::geometry::{box_iou, BBox};
use crate::mask::{mask_bbox, BinaryMask};
use crate::prediction::{Payload, PredictionRecord};
use crate::types::TargetHypothesis;

/// Table column order for the benchmark categories.
pub const CATEGORY_ORDER: [&str; 6] = ["Vehicles", "Pop-IP", "Anime", "ICON", "Celebrities", "PRODUCT"];
pub const OVERALL: &str = "Overall";

/// Samples at or above this IoU count as hits / successes.
pub const IOU_THRESHOLD: f64 = 0.5;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Fraction of values `>= threshold` (inclusive).
pub fn recall_at(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64
}

fn overlap_ratio(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean of per-sample `I/U`.
pub fn giou(overlaps: &[(u64, u64)]) -> f64 {
    let per: Vec<f64> = overlaps.iter().map(|&(i, u)| overlap_ratio(i, u)).collect();
    mean(&per)
}

/// Cumulative `ΣI / ΣU`.
pub fn ciou(overlaps: &[(u64, u64)]) -> f64 {
    let (i, u) = overlaps
        .iter()
        .fold((0u64, 0u64), |(a, b), &(i, u)| (a + i, b + u));
    overlap_ratio(i, u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundCell {
    pub iou_mean: f64,
    pub recall_at_05: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegCell {
    pub giou: f64,
    pub ciou: f64,
    pub count: usize,
    pub intersection: u64,
    pub union: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaCell {
    pub accuracy: f64,
    pub correct: usize,
    pub count: usize,
}

/// Per-category cells plus the overall cell for one task view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split<C> {
    pub categories: BTreeMap<String, C>,
    pub overall: C,
}

fn group<T: Clone>(rows: &[(String, T)]) -> BTreeMap<String, Vec<T>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (cat, v) in rows {
        out.entry(cat.clone()).or_default().push(v.clone());
    }
    out
}

fn split_from<T: Clone, C>(rows: &[(String, T)], cell: impl Fn(&[T]) -> C) -> Split<C> {
    let all: Vec<T> = rows.iter().map(|(_, v)| v.clone()).collect();
    Split {
        categories: group(rows).into_iter().map(|(k, v)| (k, cell(&v))).collect(),
        overall: cell(&all),
    }
}

/// Pair each ground-truth sample of `task` with its prediction (if any).
/// Predictions without a matching sample are an error.
fn pair<'a>(
    preds: &'a [PredictionRecord],
    gts: &'a [TaskSample],
    task: Task,
) -> Result<Vec<(&'a TaskSample, Option<&'a PredictionRecord>)>> {
    let gts: Vec<&TaskSample> = gts.iter().filter(|s| s.task == task).collect();
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in preds.iter().filter(|p| p.task() == task) {
        if !gts.iter().any(|g| g.qa_id == p.qa_id) {
            return Err(Error::OrphanPrediction(p.qa_id.clone()));
        }
        by_id.insert(p.qa_id.as_str(), p);
    }
    Ok(gts
        .into_iter()
        .map(|g| (g, by_id.get(g.qa_id.as_str()).copied()))
        .collect())
}

/// Per-sample box IoU; a missing prediction scores 0.
pub fn grounding_ious(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<Vec<(String, String, f64)>> {
    let pairs = pair(preds, gts, Task::Ground)?;
    Ok(map_collect(&pairs, |(g, p)| {
        let iou = match p.map(|p| &p.payload) {
            Some(Payload::Ground(Some(b))) => box_iou(b, &g.gt_bbox),
            _ => 0.0,
        };
        (g.qa_id.clone(), g.category.clone(), iou)
    }))
}

pub fn score_grounding(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<Split<GroundCell>> {
    let rows: Vec<(String, f64)> = grounding_ious(preds, gts)?
        .into_iter()
        .map(|(_, c, v)| (c, v))
        .collect();
    Ok(split_from(&rows, |v| GroundCell {
        iou_mean: mean(v),
        recall_at_05: recall_at(v, IOU_THRESHOLD),
        count: v.len(),
    }))
}

fn predicted_mask(sample: &TaskSample, pred: Option<&PredictionRecord>) -> Result<BinaryMask> {
    let gt = &sample.gt_mask;
    match pred.map(|p| &p.payload) {
        Some(Payload::Seg(Some(rle))) => {
            let m = rle.decode()?;
            if m.height() != gt.height() || m.width() != gt.width() {
                return Err(Error::ShapeMismatch {
                    left_h: m.height(),
                    left_w: m.width(),
                    right_h: gt.height(),
                    right_w: gt.width(),
                });
            }
            Ok(m)
        }
        _ => Ok(BinaryMask::zeros(gt.height(), gt.width())),
    }
}

/// `(qa_id, category, (intersection, union))` for one seg sample.
pub type Overlap = (String, String, (u64, u64));

/// Per-sample `(intersection, union)` against the ground-truth mask. A
/// missing prediction is an empty mask.
pub fn segmentation_overlaps(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<Vec<Overlap>> {
    let pairs = pair(preds, gts, Task::Seg)?;
    map_collect(&pairs, |(g, p)| {
        let m = predicted_mask(g, *p).map_err(|e| match e {
            Error::ShapeMismatch { .. } => {
                Error::MalformedPrediction(format!("shape-mismatch({}): {e}", g.qa_id))
            }
            other => other,
        })?;
        let iu = m.intersection_union(&g.gt_mask)?;
        Ok((g.qa_id.clone(), g.category.clone(), iu))
    })
    .into_iter()
    .collect()
}

pub fn score_segmentation(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<Split<SegCell>> {
    let rows: Vec<(String, (u64, u64))> = segmentation_overlaps(preds, gts)?
        .into_iter()
        .map(|(_, c, v)| (c, v))
        .collect();
    Ok(split_from(&rows, |v| SegCell {
        giou: giou(v),
        ciou: ciou(v),
        count: v.len(),
        intersection: v.iter().map(|x| x.0).sum(),
        union: v.iter().map(|x| x.1).sum(),
    }))
}

pub fn score_vqa(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<Split<VqaCell>> {
    let pairs = pair(preds, gts, Task::Vqa)?;
    let rows: Vec<(String, bool)> = pairs
        .iter()
        .map(|(g, p)| {
            let hit = match p.map(|p| &p.payload) {
                Some(Payload::Vqa(Some(i))) => Some(*i) == g.answer_index,
                _ => false,
            };
            (g.category.clone(), hit)
        })
        .collect();
    Ok(split_from(&rows, |v| {
        let correct = v.iter().filter(|&&b| b).count();
        VqaCell {
            accuracy: if v.is_empty() {
                0.0
            } else {
                correct as f64 / v.len() as f64
            },
            correct,
            count: v.len(),
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLabel {
    SearchEntity,
    Region,
    MaskTransfer,
    None,
}

fn normalize_name(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case- and punctuation-insensitive containment match against the name or
/// any alias.
pub fn entity_match(predicted: &str, name: &str, aliases: &[String]) -> bool {
    let p = normalize_name(predicted);
    if p.is_empty() {
        return false;
    }
    std::iter::once(name)
        .chain(aliases.iter().map(String::as_str))
        .map(normalize_name)
        .filter(|t| !t.is_empty())
        .any(|t| p == t || p.contains(&t) || t.contains(&p))
}

/// Label a segmentation sample. Samples with mask IoU ≥ 0.5 are `None`.
/// Otherwise: wrong entity → `SearchEntity`; right entity but box IoU
/// below 0.5 → `Region`; else `MaskTransfer`.
pub fn classify_failure(
    sample: &TaskSample,
    hypothesis: Option<&TargetHypothesis>,
    pred_bbox: Option<&BBox>,
    pred_mask: &BinaryMask,
) -> Result<FailureLabel> {
    let (i, u) = pred_mask.intersection_union(&sample.gt_mask)?;
    if overlap_ratio(i, u) >= IOU_THRESHOLD {
        return Ok(FailureLabel::None);
    }
    let entity_ok =
        hypothesis.is_some_and(|h| entity_match(&h.entity_name, &sample.target_name, &sample.target_aliases));
    if !entity_ok {
        return Ok(FailureLabel::SearchEntity);
    }
    let box_ok = pred_bbox.is_some_and(|b| box_iou(b, &sample.gt_bbox) >= IOU_THRESHOLD);
    Ok(if box_ok {
        FailureLabel::MaskTransfer
    } else {
        FailureLabel::Region
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub evaluated: usize,
    pub failed: usize,
    pub search_entity: usize,
    pub region: usize,
    pub mask_transfer: usize,
}

impl FailureCounts {
    pub fn add(&mut self, label: FailureLabel) {
        self.evaluated += 1;
        match label {
            FailureLabel::None => return,
            FailureLabel::SearchEntity => self.search_entity += 1,
            FailureLabel::Region => self.region += 1,
            FailureLabel::MaskTransfer => self.mask_transfer += 1,
        }
        self.failed += 1;
    }
}

/// Classify every segmentation sample. The box used for the region check is
/// the record's `bound_bbox`, or the predicted mask's bounding box.
pub fn failure_taxonomy(preds: &[PredictionRecord], gts: &[TaskSample]) -> Result<FailureCounts> {
    let pairs = pair(preds, gts, Task::Seg)?;
    let labels: Vec<Result<FailureLabel>> = map_collect(&pairs, |(g, p)| {
        let mask = predicted_mask(g, *p)?;
        let bbox = p.and_then(|p| p.bound_bbox).or_else(|| mask_bbox(&mask).ok());
        classify_failure(g, p.and_then(|p| p.hypothesis.as_ref()), bbox.as_ref(), &mask)
    });
    let mut counts = FailureCounts::default();
    for l in labels {
        counts.add(l?);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ground: Option<Split<GroundCell>>,
    pub seg: Option<Split<SegCell>>,
    pub vqa: Option<Split<VqaCell>>,
    pub failure_counts: Option<FailureCounts>,
    pub overall_weighting: String,
    pub config: Value,
}

pub fn build_report(
    ground: Option<Split<GroundCell>>,
    seg: Option<Split<SegCell>>,
    vqa: Option<Split<VqaCell>>,
    failure_counts: Option<FailureCounts>,
    config: Value,
) -> EvaluationReport {
    EvaluationReport {
        ground,
        seg,
        vqa,
        failure_counts,
        overall_weighting: "sample-weighted".to_string(),
        config,
    }
}

/// Score every task view that has ground-truth samples. Views with no
/// samples are reported as absent.
pub fn evaluate(preds: &[PredictionRecord], gts: &[TaskSample], config: Value) -> Result<EvaluationReport> {
    let has = |t: Task| gts.iter().any(|s| s.task == t);
    for p in preds {
        if !gts.iter().any(|g| g.qa_id == p.qa_id && g.task == p.task()) {
            return Err(Error::OrphanPrediction(p.qa_id.clone()));
        }
    }
    let ground = has(Task::Ground)
        .then(|| score_grounding(preds, gts))
        .transpose()?;
    let seg = has(Task::Seg)
        .then(|| score_segmentation(preds, gts))
        .transpose()?;
    let vqa = has(Task::Vqa).then(|| score_vqa(preds, gts)).transpose()?;
    let failures = has(Task::Seg).then(|| failure_taxonomy(preds, gts)).transpose()?;
    Ok(build_report(ground, seg, vqa, failures, config))
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn categories(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        let mut add = |keys: Vec<&String>| {
            for k in keys {
                if !seen.contains(k) {
                    seen.push(k.clone());
                }
            }
        };
        if let Some(s) = &self.ground {
            add(s.categories.keys().collect());
        }
        if let Some(s) = &self.seg {
            add(s.categories.keys().collect());
        }
        if let Some(s) = &self.vqa {
            add(s.categories.keys().collect());
        }
        let rank = |c: &String| {
            CATEGORY_ORDER
                .iter()
                .position(|k| k.eq_ignore_ascii_case(c))
                .unwrap_or(CATEGORY_ORDER.len())
        };
        seen.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
        seen
    }

    /// Aligned plain-text tables, values in percent with two decimals.
    pub fn render_tables(&self, by_category: bool) -> String {
        let mut cols: Vec<String> = if by_category {
            self.categories()
        } else {
            Vec::new()
        };
        cols.push(OVERALL.to_string());
        let mut out = String::new();
        let header = |out: &mut String, title: &str| {
            let _ = write!(out, "{title:<14}");
            for c in &cols {
                let _ = write!(out, "{c:>12}");
            }
            out.push('\n');
        };
        fn row<C>(out: &mut String, cols: &[String], split: &Split<C>, name: &str, f: impl Fn(&C) -> String) {
            let _ = write!(out, "  {name:<12}");
            for c in cols {
                let cell = if c == OVERALL {
                    Some(&split.overall)
                } else {
                    split.categories.get(c)
                };
                let _ = write!(out, "{:>12}", cell.map(&f).unwrap_or_else(|| "-".into()));
            }
            out.push('\n');
        }
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        if let Some(g) = &self.ground {
            header(&mut out, "SearchGround");
            row(&mut out, &cols, g, "IoU", |c| pct(c.iou_mean));
            row(&mut out, &cols, g, "R@0.5", |c| pct(c.recall_at_05));
            row(&mut out, &cols, g, "n", |c| c.count.to_string());
        }
        if let Some(s) = &self.seg {
            header(&mut out, "SearchSeg");
            row(&mut out, &cols, s, "gIoU", |c| pct(c.giou));
            row(&mut out, &cols, s, "cIoU", |c| pct(c.ciou));
            row(&mut out, &cols, s, "n", |c| c.count.to_string());
        }
        if let Some(v) = &self.vqa {
            header(&mut out, "SearchVQA");
            row(&mut out, &cols, v, "Acc", |c| pct(c.accuracy));
            row(&mut out, &cols, v, "n", |c| c.count.to_string());
        }
        if let Some(f) = &self.failure_counts {
            let _ = writeln!(
                out,
                "Failures (seg, mask IoU < 0.5): {} of {} | search/entity {} | region {} | mask transfer {}",
                f.failed, f.evaluated, f.search_entity, f.region, f.mask_transfer
            );
        }
        if out.is_empty() {
            out.push_str("(no scored tasks)\n");
        }
        out
    }
}
