use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{PipelineConfig, RoiConfig, RpnConfig};
use crate::error::{Error, Result};
use crate::geometry::{decode_deltas, encode_deltas, generate_anchors, iou, nms_indices, BBox};
use crate::mask::Annotation;
use crate::rng::SeededRng;

/// Every anchor of an image together with where its objectness logit and
/// deltas live in the level-concatenated RPN outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTable {
    pub boxes: Vec<BBox>,
    /// Flat index of the objectness logit in the concatenated cls outputs.
    pub cls_index: Vec<usize>,
    /// Flat index of `dx` in the concatenated reg outputs; coordinate `d`
    /// lives at `reg_index + d * plane`.
    pub reg_index: Vec<usize>,
    pub plane: Vec<usize>,
}

impl AnchorTable {
    /// Layout for an `height x width` image.
    pub fn build(config: &PipelineConfig, height: usize, width: usize) -> Result<Self> {
        let strides = config.backbone.pyramid_strides();
        let per_loc = config.anchors.per_location();
        let extents: Vec<(usize, usize)> = strides.iter().map(|s| (height / s, width / s)).collect();
        let mut level_of = Vec::new();
        let mut rank = Vec::new();
        for l in &config.anchors.levels {
            let p = strides
                .iter()
                .position(|s| *s == l.stride)
                .ok_or_else(|| Error::invalid("anchors", format!("stride {} matches no pyramid level", l.stride)))?;
            rank.push(level_of.iter().filter(|&&q| q == p).count());
            level_of.push(p);
        }
        let slots: Vec<usize> = (0..strides.len())
            .map(|p| level_of.iter().filter(|&&q| q == p).count().max(1) * per_loc)
            .collect();
        let mut cls_off = vec![0; strides.len()];
        let mut reg_off = vec![0; strides.len()];
        for p in 1..strides.len() {
            let (h, w) = extents[p - 1];
            cls_off[p] = cls_off[p - 1] + slots[p - 1] * h * w;
            reg_off[p] = reg_off[p - 1] + 4 * slots[p - 1] * h * w;
        }
        let anchor_extents: Vec<(usize, usize)> = level_of.iter().map(|&p| extents[p]).collect();
        let boxes = generate_anchors(&config.anchors, &anchor_extents);
        let mut cls_index = Vec::with_capacity(boxes.len());
        let mut reg_index = Vec::with_capacity(boxes.len());
        let mut plane = Vec::with_capacity(boxes.len());
        for (l, &p) in level_of.iter().enumerate() {
            let (h, w) = extents[p];
            for i in 0..h {
                for j in 0..w {
                    for t in 0..per_loc {
                        let ch = rank[l] * per_loc + t;
                        cls_index.push(cls_off[p] + ch * h * w + i * w + j);
                        reg_index.push(reg_off[p] + 4 * ch * h * w + i * w + j);
                        plane.push(h * w);
                    }
                }
            }
        }
        Ok(Self { boxes, cls_index, reg_index, plane })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn deltas(&self, reg: &[f64], a: usize) -> [f64; 4] {
        core::array::from_fn(|d| reg[self.reg_index[a] + d * self.plane[a]])
    }

    pub fn reg_indices(&self, a: usize) -> [usize; 4] {
        core::array::from_fn(|d| self.reg_index[a] + d * self.plane[a])
    }
}

/// Sampled RPN training anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSample {
    /// `(anchor index, label)`, positives first.
    pub anchors: Vec<(usize, f64)>,
    /// `(anchor index, target deltas)` for the positives.
    pub positives: Vec<(usize, [f64; 4])>,
}

/// Labels anchors (positive at IoU >= `positive_iou` or best-for-some-GT,
/// negative below `negative_iou`) and samples up to `anchors_per_image`.
pub fn sample_anchors(anchors: &[BBox], gts: &[Annotation], cfg: &RpnConfig, rng: &mut SeededRng) -> Result<AnchorSample> {
    let mut best = vec![(0.0f64, usize::MAX); anchors.len()];
    let mut forced = vec![false; anchors.len()];
    for (gi, gt) in gts.iter().enumerate() {
        let mut top = 0.0;
        let mut argmax = Vec::new();
        for (a, anchor) in anchors.iter().enumerate() {
            let v = iou(anchor, &gt.bbox);
            if v > best[a].0 {
                best[a] = (v, gi);
            }
            if v > top {
                top = v;
                argmax.clear();
                argmax.push(a);
            } else if v == top && v > 0.0 {
                argmax.push(a);
            }
        }
        for a in argmax {
            forced[a] = true;
        }
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for a in 0..anchors.len() {
        if forced[a] || (best[a].1 != usize::MAX && best[a].0 >= cfg.positive_iou) {
            pos.push(a);
        } else if best[a].0 < cfg.negative_iou {
            neg.push(a);
        }
    }
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let max_pos = libm::floor(cfg.anchors_per_image as f64 * cfg.positive_fraction) as usize;
    pos.truncate(max_pos);
    neg.truncate(cfg.anchors_per_image - pos.len());
    let mut positives = Vec::with_capacity(pos.len());
    for &a in &pos {
        positives.push((a, encode_deltas(&anchors[a], &gts[best[a].1].bbox)?));
    }
    let anchors = pos.iter().map(|&a| (a, 1.0)).chain(neg.iter().map(|&a| (a, 0.0))).collect();
    Ok(AnchorSample { anchors, positives })
}

/// Decodes, clips and NMS-filters the highest-scoring anchors. Boxes
/// thinner than one pixel are dropped; scores are sigmoid objectness.
pub fn propose(
    anchors: &[BBox],
    logits: &[f64],
    deltas: &[[f64; 4]],
    image_extent: (usize, usize),
    pre_nms: usize,
    post_nms: usize,
    nms_iou: f64,
) -> Result<Vec<BBox>> {
    if logits.len() != anchors.len() || deltas.len() != anchors.len() {
        return Err(Error::ShapeMismatch { op: "propose", axis: "anchors", expected: anchors.len(), found: logits.len().min(deltas.len()) });
    }
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(pre_nms);
    let (w, h) = (image_extent.0 as f64, image_extent.1 as f64);
    let mut cands = Vec::with_capacity(order.len());
    for a in order {
        let b = decode_deltas(&anchors[a], deltas[a], Some((w, h)))?;
        if b.width() >= 1.0 && b.height() >= 1.0 {
            cands.push(b.scored(sigmoid(logits[a])));
        }
    }
    let keep = nms_indices(&cands, nms_iou)?;
    Ok(keep.into_iter().take(post_nms).map(|i| cands[i]).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Training RoIs, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledRois {
    pub boxes: Vec<BBox>,
    /// 1 for positives, 0 for negatives.
    pub labels: Vec<f64>,
    pub positives: usize,
    /// Regression targets of the positives.
    pub deltas: Vec<[f64; 4]>,
    /// Row-major `mask_extent^2` 0/1 targets of the positives, cropped from
    /// the matched instance mask over the RoI.
    pub mask_targets: Vec<Vec<f64>>,
}

/// Draws `rois_per_image` RoIs at `positive_parts : negative_parts`.
/// The positive quota is `ceil(total * pos / (pos + neg))`; when either pool
/// runs short, the other fills the remaining slots.
pub fn sample_rois(proposals: &[BBox], gts: &[Annotation], cfg: &RoiConfig, rng: &mut SeededRng) -> Result<SampledRois> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let mut best = (0.0, usize::MAX);
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(p, &gt.bbox);
            if v > best.0 {
                best = (v, gi);
            }
        }
        if best.1 != usize::MAX && best.0 >= cfg.positive_iou {
            pos.push((i, best.1));
        } else {
            neg.push(i);
        }
    }
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let total = cfg.rois_per_image;
    let quota = (total * cfg.positive_parts).div_ceil(cfg.positive_parts + cfg.negative_parts);
    let mut n_pos = pos.len().min(quota);
    let n_neg = neg.len().min(total - n_pos);
    n_pos = pos.len().min(total - n_neg);
    pos.truncate(n_pos);
    neg.truncate(n_neg);

    let mut out = SampledRois {
        boxes: Vec::with_capacity(n_pos + n_neg),
        labels: Vec::with_capacity(n_pos + n_neg),
        positives: n_pos,
        deltas: Vec::with_capacity(n_pos),
        mask_targets: Vec::with_capacity(n_pos),
    };
    for &(i, gi) in &pos {
        let b = proposals[i];
        out.boxes.push(b);
        out.labels.push(1.0);
        out.deltas.push(encode_deltas(&b, &gts[gi].bbox)?);
        out.mask_targets.push(gts[gi].mask.crop_resample(&b, cfg.mask_extent));
    }
    for &i in &neg {
        out.boxes.push(proposals[i]);
        out.labels.push(0.0);
    }
    Ok(out)
}
