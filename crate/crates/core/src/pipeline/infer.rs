use alloc::vec::Vec;

use super::model::Model;
use super::targets::{propose, sigmoid, AnchorTable};
use super::BOX_DELTA_WEIGHTS;
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::geometry::{decode_deltas, nms_indices, BBox};
use crate::mask::InstanceMask;
use crate::tensor::Tensor;

/// One predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Refined box, carrying `score`.
    pub bbox: BBox,
    /// Foreground probability in `[0, 1]`.
    pub score: f64,
    /// Per-pixel foreground probabilities over the box, `mask_extent^2` row-major.
    pub mask_probs: Vec<f64>,
    pub mask_extent: usize,
    /// `mask_probs` resampled into the box and binarised at the configured
    /// threshold (0.5 by default).
    pub mask: InstanceMask,
}

/// Detections for one `[1, 3, H, W]` image, by descending score, at most
/// `infer.max_detections` of them.
pub fn infer(model: &Model, image: &Tensor) -> Result<Vec<Detection>> {
    let cfg = &model.config;
    let [_, _, h, w] = image.dims4("infer")?;
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let x = g.constant(image.clone());
    let feats = model.backbone(&mut g, &vars, x)?;
    let rpn = model.rpn(&mut g, &vars, &feats)?;
    let cls_parts: Vec<Var> = rpn.iter().map(|l| l.cls).collect();
    let reg_parts: Vec<Var> = rpn.iter().map(|l| l.reg).collect();
    let cls_cat = g.concat(&cls_parts)?;
    let reg_cat = g.concat(&reg_parts)?;
    let table = AnchorTable::build(cfg, h, w)?;
    let cls_vals = g.value(cls_cat).data();
    let reg_vals = g.value(reg_cat).data();
    let logits: Vec<f64> = table.cls_index.iter().map(|&i| cls_vals[i]).collect();
    let deltas: Vec<[f64; 4]> = (0..table.len()).map(|a| table.deltas(reg_vals, a)).collect();
    let proposals = propose(
        &table.boxes,
        &logits,
        &deltas,
        (w, h),
        cfg.rpn.pre_nms_top_infer,
        cfg.rpn.post_nms_top_infer,
        cfg.rpn.nms_iou,
    )?;
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let coords: Vec<[f64; 4]> = proposals.iter().map(|b| b.coords()).collect();
    let (cls, reg) = model.box_head(&mut g, &vars, feats[0], &coords)?;
    let scores = g.value(cls).data();
    let reg = g.value(reg).data();
    let mut cands = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let s = sigmoid(scores[i]);
        if s < cfg.infer.score_threshold {
            continue;
        }
        let d: [f64; 4] = core::array::from_fn(|k| reg[4 * i + k] / BOX_DELTA_WEIGHTS[k]);
        let b = decode_deltas(p, d, Some((w as f64, h as f64)))?;
        if b.width() >= 1.0 && b.height() >= 1.0 {
            cands.push(b.scored(s));
        }
    }
    let keep = nms_indices(&cands, cfg.infer.nms_iou)?;
    let boxes: Vec<BBox> = keep.into_iter().take(cfg.infer.max_detections).map(|i| cands[i]).collect();
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let coords: Vec<[f64; 4]> = boxes.iter().map(|b| b.coords()).collect();
    let masks = model.mask_head(&mut g, &vars, feats[0], &coords)?;
    let m = cfg.roi.mask_extent;
    let probs = g.value(masks).data();
    Ok(boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mask_probs: Vec<f64> = probs[i * m * m..(i + 1) * m * m].iter().map(|&v| sigmoid(v)).collect();
            let mask = InstanceMask::paste(&mask_probs, m, b, w, h, cfg.infer.mask_threshold);
            Detection { bbox: *b, score: b.score.unwrap_or(0.0), mask_probs, mask_extent: m, mask }
        })
        .collect())
}
