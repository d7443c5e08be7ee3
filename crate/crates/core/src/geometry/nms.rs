use alloc::vec::Vec;

use super::{iou, BBox};
use crate::error::{Error, Result};

/// Greedy NMS. Candidates are visited by descending score, equal scores in
/// input order; a candidate is dropped iff its IoU with an already kept box
/// exceeds `iou_threshold`. Returns kept input indices in visiting order.
pub fn nms_indices(boxes: &[BBox], iou_threshold: f64) -> Result<Vec<usize>> {
    let mut scores = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        match b.score {
            Some(s) if !s.is_nan() => scores.push(s),
            _ => return Err(Error::invalid("nms", alloc::format!("box {i} has no score"))),
        }
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn nms(boxes: &[BBox], iou_threshold: f64) -> Result<Vec<BBox>> {
    Ok(nms_indices(boxes, iou_threshold)?.into_iter().map(|i| boxes[i]).collect())
}
