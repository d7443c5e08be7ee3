use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::augment::{AugmentPolicy, FactorRange};
use crate::error::{Error, Result};
use crate::geometry::{AnchorLevel, AnchorSet};
use crate::optim::{OptimizerKind, SgdConfig};
use crate::slc::SlcConfig;

/// Channel statistics of the synthetic harbor scenes.
pub const PIXEL_MEAN: [f64; 3] = [0.19, 0.24, 0.29];
pub const PIXEL_STD: [f64; 3] = [0.22, 0.21, 0.18];

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Output channels of the four conv stages.
    pub stage_channels: Vec<usize>,
    /// Stride of each stage's 3x3 conv.
    pub stage_strides: Vec<usize>,
    /// Number of pyramid levels, taken from the last stages.
    pub pyramid_levels: usize,
    pub fpn_channels: usize,
    /// Per-channel statistics subtracted from and divided into the input image.
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
}

impl BackboneConfig {
    /// Cumulative stride of each stage.
    pub fn cumulative_strides(&self) -> Vec<usize> {
        let mut acc = 1;
        self.stage_strides
            .iter()
            .map(|s| {
                acc *= s;
                acc
            })
            .collect()
    }

    /// Strides of the pyramid levels, finest first.
    pub fn pyramid_strides(&self) -> Vec<usize> {
        let c = self.cumulative_strides();
        c[c.len() - self.pyramid_levels..].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpnConfig {
    pub pre_nms_top_train: usize,
    pub pre_nms_top_infer: usize,
    pub post_nms_top_train: usize,
    pub post_nms_top_infer: usize,
    pub nms_iou: f64,
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub anchors_per_image: usize,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiConfig {
    pub rois_per_image: usize,
    /// Positive : negative sampling ratio.
    pub positive_parts: usize,
    pub negative_parts: usize,
    pub positive_iou: f64,
    /// RoIAlign extent for the classification/regression head.
    pub box_extent: usize,
    /// RoIAlign extent for the mask head.
    pub mask_roi_extent: usize,
    /// Predicted mask extent (one 2x upsample of `mask_roi_extent`).
    pub mask_extent: usize,
    pub sampling_ratio: usize,
    pub box_hidden: usize,
    pub mask_channels: usize,
    pub mask_convs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub max_detections: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub mask_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub backbone: BackboneConfig,
    pub anchors: AnchorSet,
    pub rpn: RpnConfig,
    pub roi: RoiConfig,
    pub infer: InferConfig,
    /// `slc.channels` is forced to `roi.mask_channels` when the model is built.
    pub slc: SlcConfig,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub sgd: SgdConfig,
    /// Global gradient-norm cap applied before each step; 0 disables it.
    pub clip_grad_norm: f64,
    /// Steps over which the learning rate ramps linearly up to `sgd.lr`.
    pub warmup_iters: usize,
    /// Epochs after which the learning rate is multiplied by 0.1.
    pub lr_drop_epochs: Vec<usize>,
    pub augment: Option<AugmentPolicy>,
}

impl Default for PipelineConfig {
    /// Full-size protocol: 2000/1000 proposals, 200 RoIs at 1:2, 100
    /// detections, 25 epochs at lr 5e-4, anchors 32..512 with the 0.707 step.
    fn default() -> Self {
        let mut anchors = AnchorSet::doubling(&[8, 8, 8, 16, 16], 32.0);
        anchors.scale_multipliers = vec![1.0, 0.707];
        Self {
            backbone: BackboneConfig {
                stage_channels: vec![16, 32, 64, 64],
                stage_strides: vec![2, 2, 2, 2],
                pyramid_levels: 2,
                fpn_channels: 64,
                pixel_mean: PIXEL_MEAN,
                pixel_std: PIXEL_STD,
            },
            anchors,
            rpn: RpnConfig {
                pre_nms_top_train: 6000,
                pre_nms_top_infer: 6000,
                post_nms_top_train: 2000,
                post_nms_top_infer: 1000,
                nms_iou: 0.7,
                positive_iou: 0.7,
                negative_iou: 0.3,
                anchors_per_image: 256,
                positive_fraction: 0.5,
            },
            roi: RoiConfig {
                rois_per_image: 200,
                positive_parts: 1,
                negative_parts: 2,
                positive_iou: 0.5,
                box_extent: 7,
                mask_roi_extent: 14,
                mask_extent: 28,
                sampling_ratio: 2,
                box_hidden: 256,
                mask_channels: 64,
                mask_convs: 4,
            },
            infer: InferConfig {
                max_detections: 100,
                score_threshold: 0.05,
                nms_iou: 0.5,
                mask_threshold: 0.5,
            },
            slc: SlcConfig { channels: 64, ..SlcConfig::default() },
            epochs: 25,
            optimizer: OptimizerKind::Sgd,
            sgd: SgdConfig::default(),
            clip_grad_norm: 0.0,
            warmup_iters: 0,
            lr_drop_epochs: Vec::new(),
            augment: Some(AugmentPolicy::default()),
        }
    }
}

impl PipelineConfig {
    /// Laptop-scale preset for 64x64 scenes: narrow layers, pyramid strides
    /// 4/8, anchors 8..32, fewer proposals and RoIs.
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            backbone: BackboneConfig {
                stage_channels: vec![8, 16, 16, 16],
                stage_strides: vec![1, 2, 2, 2],
                pyramid_levels: 2,
                fpn_channels: 16,
                ..base.backbone
            },
            anchors: AnchorSet::doubling(&[4, 4, 8], 8.0),
            rpn: RpnConfig {
                pre_nms_top_train: 300,
                pre_nms_top_infer: 300,
                post_nms_top_train: 64,
                post_nms_top_infer: 48,
                anchors_per_image: 64,
                ..base.rpn
            },
            roi: RoiConfig {
                rois_per_image: 24,
                box_hidden: 64,
                mask_channels: 8,
                ..base.roi
            },
            infer: InferConfig { max_detections: 20, ..base.infer },
            slc: SlcConfig { channels: 8, ..base.slc },
            epochs: 25,
            optimizer: OptimizerKind::Adam,
            sgd: SgdConfig { lr: 0.003, ..base.sgd },
            clip_grad_norm: 5.0,
            warmup_iters: 100,
            lr_drop_epochs: vec![18],
            augment: Some(AugmentPolicy {
                rotation: FactorRange::new(0.0, 0.0),
                ..AugmentPolicy::default()
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidArgument { op: "pipeline config", msg: m });
        let b = &self.backbone;
        if b.stage_channels.len() != b.stage_strides.len() || b.stage_channels.is_empty() {
            return bad("stage_channels and stage_strides must have the same non-zero length".into());
        }
        if b.stage_channels.contains(&0) || b.stage_strides.contains(&0) || b.fpn_channels == 0 {
            return bad("backbone counts must be positive".into());
        }
        if b.pixel_std.iter().any(|s| !(*s > 0.0)) || b.pixel_mean.iter().any(|m| !m.is_finite()) {
            return bad("pixel_std must be positive and pixel_mean finite".into());
        }
        if b.pyramid_levels == 0 || b.pyramid_levels > b.stage_channels.len() {
            return bad(format!("pyramid_levels must lie in 1..={}", b.stage_channels.len()));
        }
        let strides = b.pyramid_strides();
        for w in strides.windows(2) {
            if w[1] != 2 * w[0] {
                return bad("consecutive pyramid levels must differ by stride 2".into());
            }
        }
        if self.anchors.levels.is_empty() || self.anchors.per_location() == 0 {
            return bad("anchor set is empty".into());
        }
        for AnchorLevel { stride, base_scale } in &self.anchors.levels {
            if !strides.contains(stride) {
                return bad(format!("anchor stride {stride} matches no pyramid level {strides:?}"));
            }
            if !(*base_scale > 0.0) {
                return bad("anchor scales must be positive".into());
            }
        }
        let r = &self.rpn;
        if r.post_nms_top_train == 0 || r.post_nms_top_infer == 0 || r.anchors_per_image == 0 {
            return bad("proposal counts must be positive".into());
        }
        let roi = &self.roi;
        if roi.rois_per_image == 0 || roi.positive_parts + roi.negative_parts == 0 {
            return bad("RoI counts must be positive".into());
        }
        if roi.negative_parts == 0 && roi.positive_parts == 0 {
            return bad("sampling ratio needs a non-zero part".into());
        }
        if roi.mask_extent != 2 * roi.mask_roi_extent {
            return bad("mask_extent must be twice mask_roi_extent".into());
        }
        if roi.box_extent % 2 == 0 || roi.box_extent == 0 {
            return bad("box_extent must be odd".into());
        }
        if roi.mask_channels == 0 || roi.box_hidden == 0 || roi.sampling_ratio == 0 {
            return bad("head widths must be positive".into());
        }
        if self.infer.max_detections == 0 {
            return bad("max_detections must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        self.slc.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Copy with `slc.channels` tied to the mask-head width.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.slc.channels = c.roi.mask_channels;
        c
    }

    /// `ceil(rois * pos / (pos + neg))`.
    pub fn positive_roi_target(&self) -> usize {
        let parts = self.roi.positive_parts + self.roi.negative_parts;
        (self.roi.rois_per_image * self.roi.positive_parts).div_ceil(parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_defaults() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.rpn.post_nms_top_train, c.rpn.post_nms_top_infer), (2000, 1000));
        assert_eq!(c.roi.rois_per_image, 200);
        assert_eq!((c.roi.positive_parts, c.roi.negative_parts), (1, 2));
        assert_eq!(c.infer.max_detections, 100);
        assert_eq!(c.epochs, 25);
        assert_eq!((c.sgd.lr, c.sgd.momentum, c.sgd.weight_decay), (5e-4, 0.9, 1e-4));
        let bases: Vec<f64> = c.anchors.levels.iter().map(|l| l.base_scale).collect();
        assert_eq!(bases, [32.0, 64.0, 128.0, 256.0, 512.0]);
        assert_eq!(c.anchors.scale_multipliers, [1.0, 0.707]);
        assert_eq!(c.anchors.aspect_ratios, [0.5, 1.0, 1.5]);
        assert_eq!(c.backbone.pyramid_strides(), [8, 16]);
        assert_eq!(c.positive_roi_target(), 67);
    }

    #[test]
    fn desk_preset_is_valid() {
        let c = PipelineConfig::desk();
        c.validate().unwrap();
        assert_eq!(c.backbone.pyramid_strides(), [4, 8]);
    }

    #[test]
    fn mismatched_anchor_stride_rejected() {
        let mut c = PipelineConfig::desk();
        c.anchors.levels[0].stride = 32;
        assert!(c.validate().is_err());
    }
}
