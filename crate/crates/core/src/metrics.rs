//! Greedy one-to-one matching, recall, all-point-interpolated average
//! precision and the SLC ablation runner.
//!
//! Matches require IoU >= 0.5 by default (box or mask IoU), the evaluation is
//! single-class, and AP is the exact area under the precision envelope of the
//! score-sorted detection list.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::mask::Annotation;
use crate::pipeline::{infer, train, Detection, Model, PipelineConfig, Sample};
use crate::slc::{FusedLayers, SlcConfig};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Box,
    Mask,
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub score: f64,
    /// Matched ground-truth index; None marks a false positive.
    pub gt: Option<usize>,
    pub iou: f64,
}

impl MatchRecord {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Visits detections in the given (descending-score) order; each takes the
/// highest-IoU still-unmatched ground truth with IoU >= `iou_threshold`
/// (lowest index on ties).
pub fn match_predictions(
    detections: &[Detection],
    ground_truth: &[Annotation],
    iou_threshold: f64,
    mode: MatchMode,
) -> Result<Vec<MatchRecord>> {
    if detections.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(Error::invalid("match_predictions", "detections must be sorted by descending score"));
    }
    let mut taken = vec![false; ground_truth.len()];
    Ok(detections
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in ground_truth.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = match mode {
                    MatchMode::Box => iou(&d.bbox, &gt.bbox),
                    MatchMode::Mask => d.mask.iou(&gt.mask),
                };
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
            }
            MatchRecord { score: d.score, gt: best.map(|b| b.0), iou: best.map_or(0.0, |b| b.1) }
        })
        .collect())
}

fn sorted(records: &[MatchRecord]) -> Vec<MatchRecord> {
    let mut r = records.to_vec();
    // stable: equal scores keep their input order
    r.sort_by(|a, b| b.score.total_cmp(&a.score));
    r
}

/// Area under the all-point-interpolated precision/recall curve of the
/// score-sorted records, in percent. None when `num_gt == 0`.
pub fn average_precision(records: &[MatchRecord], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let r = sorted(records);
    let mut precision = Vec::with_capacity(r.len());
    let mut tp = 0usize;
    for (i, m) in r.iter().enumerate() {
        tp += m.is_tp() as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap: f64 = r
        .iter()
        .zip(&precision)
        .filter(|(m, _)| m.is_tp())
        .map(|(_, p)| p / num_gt as f64)
        .sum();
    Some(100.0 * ap)
}

/// True positives over `num_gt`, in percent. None when `num_gt == 0`.
pub fn recall(records: &[MatchRecord], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let tp = records.iter().filter(|m| m.is_tp()).count();
    Some(100.0 * tp as f64 / num_gt as f64)
}

/// Summary metrics: mask-level and box-level recall and AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub recall_mask: Option<f64>,
    pub ap_mask: Option<f64>,
    pub recall_box: Option<f64>,
    pub ap_box: Option<f64>,
    pub iou_threshold: f64,
    pub num_gt: usize,
    pub num_detections: usize,
    pub matched_mask: usize,
    pub matched_box: usize,
}

/// Pools matches over images (each image matched independently) and scores them.
pub fn evaluate(per_image: &[(Vec<Detection>, Vec<Annotation>)], iou_threshold: f64) -> Result<MetricsReport> {
    let mut boxes = Vec::new();
    let mut masks = Vec::new();
    let mut num_gt = 0;
    for (dets, gts) in per_image {
        boxes.extend(match_predictions(dets, gts, iou_threshold, MatchMode::Box)?);
        masks.extend(match_predictions(dets, gts, iou_threshold, MatchMode::Mask)?);
        num_gt += gts.len();
    }
    Ok(MetricsReport {
        recall_mask: recall(&masks, num_gt),
        ap_mask: average_precision(&masks, num_gt),
        recall_box: recall(&boxes, num_gt),
        ap_box: average_precision(&boxes, num_gt),
        iou_threshold,
        num_gt,
        num_detections: boxes.len(),
        matched_mask: masks.iter().filter(|m| m.is_tp()).count(),
        matched_box: boxes.iter().filter(|m| m.is_tp()).count(),
    })
}

/// Runs inference over `test` and evaluates at `iou_threshold`.
pub fn evaluate_model(model: &Model, test: &[Sample], iou_threshold: f64) -> Result<MetricsReport> {
    let mut per_image = Vec::with_capacity(test.len());
    for s in test {
        per_image.push((infer(model, &s.image)?, s.annotations.clone()));
    }
    evaluate(&per_image, iou_threshold)
}

/// Column header of the ablation table.
pub const ABLATION_COLUMNS: [&str; 7] = ["Method", "layers=2", "layers=3", "cls&reg", "r1&r2", "R(%)", "AP(%)"];

/// The five SLC rows: fused {1,3} and all three layers at rates (2,3), the
/// cls&reg attachment, and two rows at (2,4).
pub fn default_ablation_grid() -> Vec<SlcConfig> {
    let base = SlcConfig::default();
    vec![
        SlcConfig { fused_layers: FusedLayers::FIRST_AND_LAST, ..base },
        base,
        SlcConfig { attach_to_cls_reg: true, ..base },
        SlcConfig { r2: 4, ..base },
        SlcConfig { r2: 4, ..base },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub slc: SlcConfig,
    /// Error text for a variant that failed to train or evaluate.
    pub outcome: core::result::Result<MetricsReport, String>,
}

impl AblationRow {
    /// Cells in [`ABLATION_COLUMNS`] order; R and AP are mask-level.
    pub fn cells(&self) -> [String; 7] {
        let fused = self.slc.fused_layers.count();
        let mark = |b: bool| if b { "x".to_string() } else { String::new() };
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| alloc::format!("{v:.2}"));
        let (r, ap) = match &self.outcome {
            Ok(m) => (pct(m.recall_mask), pct(m.ap_mask)),
            Err(_) => ("failed".to_string(), "failed".to_string()),
        };
        [
            if self.slc.enabled { "SLC".to_string() } else { "baseline".to_string() },
            mark(self.slc.enabled && fused == 2),
            mark(self.slc.enabled && fused == 3),
            mark(self.slc.enabled && self.slc.attach_to_cls_reg),
            alloc::format!("{},{}", self.slc.r1, self.slc.r2),
            r,
            ap,
        ]
    }
}

/// Trains and evaluates every variant from the same initial seed and
/// corpus. A failing variant yields a failed row and the run continues.
pub fn run_ablation(
    grid: &[SlcConfig],
    train_set: &[Sample],
    test_set: &[Sample],
    base: &PipelineConfig,
    seed: u64,
) -> Vec<AblationRow> {
    run_ablation_with(grid, train_set, test_set, base, seed, |m, t| {
        evaluate_model(m, t, DEFAULT_MATCH_IOU)
    })
}

/// [`run_ablation`] with a caller-supplied evaluator.
pub fn run_ablation_with(
    grid: &[SlcConfig],
    train_set: &[Sample],
    test_set: &[Sample],
    base: &PipelineConfig,
    seed: u64,
    evaluate: impl Fn(&Model, &[Sample]) -> Result<MetricsReport>,
) -> Vec<AblationRow> {
    grid.iter()
        .map(|slc| {
            let outcome = (|| {
                let cfg = PipelineConfig { slc: *slc, ..base.clone() };
                let mut model = Model::new(&cfg, seed)?;
                train(&mut model, train_set, seed)?;
                evaluate(&model, test_set)
            })()
            .map_err(|e: Error| e.to_string());
            AblationRow { slc: *slc, outcome }
        })
        .collect()
}
