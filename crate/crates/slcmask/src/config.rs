//! Flat `key = value` run configuration.
//!
//! Every tunable of a run lives under one dotted key (`slc.r1`,
//! `pipeline.epochs`, ...). Files hold one assignment per line; `#` starts a
//! comment. Resolution order is built-in defaults, then the file, then
//! `--key=value` overrides. Unknown keys are rejected, and the fully resolved
//! configuration is written back in the same syntax by [`RunConfig::render`].

use std::fmt::Display;
use std::str::FromStr;

use slcmask_core::augment::{AugmentPolicy, FactorRange};
use slcmask_core::geometry::AnchorSet;
use slcmask_core::optim::OptimizerKind;
use slcmask_core::pipeline::PipelineConfig;
use slcmask_core::slc::SlcConfig;
use slcmask_core::synth::SceneSpec;

use crate::error::{CliError, CliResult};

/// Corpus generation settings for `synth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub scene: SceneSpec,
    /// Train:test split, `train_parts : test_parts`.
    pub train_parts: usize,
    pub test_parts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileConfig {
    pub size: usize,
    pub dedup_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub tiles: TileConfig,
    pub eval: EvalConfig,
    /// Pipeline settings; `pipeline.augment` mirrors `augment_enabled`.
    pub pipeline: PipelineConfig,
    pub augment_enabled: bool,
    pub augment: AugmentPolicy,
}

impl Default for RunConfig {
    /// Full-scale training protocol, 1024 px tiles deduplicated at IoU 0.1.
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let augment = pipeline.augment.unwrap_or_default();
        Self {
            seed: 0,
            synth: SynthConfig {
                count: 250,
                scene: SceneSpec::desk(),
                train_parts: 4,
                test_parts: 1,
            },
            tiles: TileConfig { size: 1024, dedup_iou: 0.1 },
            eval: EvalConfig { iou_threshold: slcmask_core::metrics::DEFAULT_MATCH_IOU },
            augment_enabled: pipeline.augment.is_some(),
            augment,
            pipeline,
        }
    }
}

impl RunConfig {
    /// Laptop-scale preset: 64 px scenes, the desk pipeline and 256 px tiles.
    pub fn desk() -> Self {
        let pipeline = PipelineConfig::desk();
        let base = Self::default();
        Self {
            tiles: TileConfig { size: 256, ..base.tiles },
            augment_enabled: pipeline.augment.is_some(),
            augment: pipeline.augment.unwrap_or(base.augment),
            pipeline,
            ..base
        }
    }

    /// Every accepted key, in rendering order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "synth.count",
        "synth.width",
        "synth.height",
        "synth.ships_min",
        "synth.ships_max",
        "synth.length_min",
        "synth.length_max",
        "synth.beam_min",
        "synth.beam_max",
        "synth.dock_probability",
        "synth.heading_min",
        "synth.heading_max",
        "synth.noise",
        "synth.train_parts",
        "synth.test_parts",
        "slc.enabled",
        "slc.r1",
        "slc.r2",
        "slc.fused_layers",
        "slc.attach_cls_reg",
        "anchors.strides",
        "anchors.base_scale",
        "anchors.multipliers",
        "anchors.ratios",
        "tiles.size",
        "tiles.dedup_iou",
        "augment.enabled",
        "augment.brightness",
        "augment.contrast",
        "augment.color",
        "augment.sharpness",
        "augment.rotation",
        "pipeline.stage_channels",
        "pipeline.stage_strides",
        "pipeline.pyramid_levels",
        "pipeline.fpn_channels",
        "pipeline.pixel_mean",
        "pipeline.pixel_std",
        "pipeline.rpn_pre_nms_train",
        "pipeline.rpn_pre_nms_infer",
        "pipeline.rpn_post_nms_train",
        "pipeline.rpn_post_nms_infer",
        "pipeline.rpn_nms_iou",
        "pipeline.rpn_positive_iou",
        "pipeline.rpn_negative_iou",
        "pipeline.rpn_anchors_per_image",
        "pipeline.rpn_positive_fraction",
        "pipeline.rois_per_image",
        "pipeline.roi_positive_parts",
        "pipeline.roi_negative_parts",
        "pipeline.roi_positive_iou",
        "pipeline.box_extent",
        "pipeline.mask_roi_extent",
        "pipeline.mask_extent",
        "pipeline.sampling_ratio",
        "pipeline.box_hidden",
        "pipeline.mask_channels",
        "pipeline.mask_convs",
        "pipeline.max_detections",
        "pipeline.score_threshold",
        "pipeline.nms_iou",
        "pipeline.mask_threshold",
        "pipeline.epochs",
        "pipeline.optimizer",
        "pipeline.lr",
        "pipeline.momentum",
        "pipeline.weight_decay",
        "pipeline.clip_grad_norm",
        "pipeline.warmup_iters",
        "pipeline.lr_drop_epochs",
        "eval.iou_threshold",
    ];

    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let bad = |e: String| CliError::Usage(format!("config key `{key}`: {e}"));
        let scene = &mut self.synth.scene;
        let p = &mut self.pipeline;
        match key {
            "seed" => self.seed = num(v).map_err(bad)?,
            "synth.count" => self.synth.count = num(v).map_err(bad)?,
            "synth.width" => scene.width = num(v).map_err(bad)?,
            "synth.height" => scene.height = num(v).map_err(bad)?,
            "synth.ships_min" => scene.ship_count.0 = num(v).map_err(bad)?,
            "synth.ships_max" => scene.ship_count.1 = num(v).map_err(bad)?,
            "synth.length_min" => scene.length.0 = num(v).map_err(bad)?,
            "synth.length_max" => scene.length.1 = num(v).map_err(bad)?,
            "synth.beam_min" => scene.beam.0 = num(v).map_err(bad)?,
            "synth.beam_max" => scene.beam.1 = num(v).map_err(bad)?,
            "synth.dock_probability" => scene.dock_probability = num(v).map_err(bad)?,
            "synth.heading_min" => scene.orientation.0 = num(v).map_err(bad)?,
            "synth.heading_max" => scene.orientation.1 = num(v).map_err(bad)?,
            "synth.noise" => scene.noise = num(v).map_err(bad)?,
            "synth.train_parts" => self.synth.train_parts = num(v).map_err(bad)?,
            "synth.test_parts" => self.synth.test_parts = num(v).map_err(bad)?,
            "slc.enabled" => p.slc.enabled = flag(v).map_err(bad)?,
            "slc.r1" => p.slc.r1 = num(v).map_err(bad)?,
            "slc.r2" => p.slc.r2 = num(v).map_err(bad)?,
            "slc.fused_layers" => p.slc.fused_layers = v.parse().map_err(|e: slcmask_core::Error| bad(e.to_string()))?,
            "slc.attach_cls_reg" => p.slc.attach_to_cls_reg = flag(v).map_err(bad)?,
            "anchors.strides" => {
                let strides: Vec<usize> = list(v).map_err(bad)?;
                let first = p.anchors.levels.first().map_or(32.0, |l| l.base_scale);
                p.anchors = AnchorSet { levels: AnchorSet::doubling(&strides, first).levels, ..p.anchors.clone() };
            }
            "anchors.base_scale" => {
                let first: f64 = num(v).map_err(bad)?;
                let strides: Vec<usize> = p.anchors.levels.iter().map(|l| l.stride).collect();
                p.anchors = AnchorSet { levels: AnchorSet::doubling(&strides, first).levels, ..p.anchors.clone() };
            }
            "anchors.multipliers" => p.anchors.scale_multipliers = list(v).map_err(bad)?,
            "anchors.ratios" => p.anchors.aspect_ratios = list(v).map_err(bad)?,
            "tiles.size" => self.tiles.size = num(v).map_err(bad)?,
            "tiles.dedup_iou" => self.tiles.dedup_iou = num(v).map_err(bad)?,
            "augment.enabled" => self.augment_enabled = flag(v).map_err(bad)?,
            "augment.brightness" => self.augment.brightness = range(v).map_err(bad)?,
            "augment.contrast" => self.augment.contrast = range(v).map_err(bad)?,
            "augment.color" => self.augment.color = range(v).map_err(bad)?,
            "augment.sharpness" => self.augment.sharpness = range(v).map_err(bad)?,
            "augment.rotation" => self.augment.rotation = range(v).map_err(bad)?,
            "pipeline.stage_channels" => p.backbone.stage_channels = list(v).map_err(bad)?,
            "pipeline.stage_strides" => p.backbone.stage_strides = list(v).map_err(bad)?,
            "pipeline.pyramid_levels" => p.backbone.pyramid_levels = num(v).map_err(bad)?,
            "pipeline.fpn_channels" => p.backbone.fpn_channels = num(v).map_err(bad)?,
            "pipeline.pixel_mean" => p.backbone.pixel_mean = triple(v).map_err(bad)?,
            "pipeline.pixel_std" => p.backbone.pixel_std = triple(v).map_err(bad)?,
            "pipeline.rpn_pre_nms_train" => p.rpn.pre_nms_top_train = num(v).map_err(bad)?,
            "pipeline.rpn_pre_nms_infer" => p.rpn.pre_nms_top_infer = num(v).map_err(bad)?,
            "pipeline.rpn_post_nms_train" => p.rpn.post_nms_top_train = num(v).map_err(bad)?,
            "pipeline.rpn_post_nms_infer" => p.rpn.post_nms_top_infer = num(v).map_err(bad)?,
            "pipeline.rpn_nms_iou" => p.rpn.nms_iou = num(v).map_err(bad)?,
            "pipeline.rpn_positive_iou" => p.rpn.positive_iou = num(v).map_err(bad)?,
            "pipeline.rpn_negative_iou" => p.rpn.negative_iou = num(v).map_err(bad)?,
            "pipeline.rpn_anchors_per_image" => p.rpn.anchors_per_image = num(v).map_err(bad)?,
            "pipeline.rpn_positive_fraction" => p.rpn.positive_fraction = num(v).map_err(bad)?,
            "pipeline.rois_per_image" => p.roi.rois_per_image = num(v).map_err(bad)?,
            "pipeline.roi_positive_parts" => p.roi.positive_parts = num(v).map_err(bad)?,
            "pipeline.roi_negative_parts" => p.roi.negative_parts = num(v).map_err(bad)?,
            "pipeline.roi_positive_iou" => p.roi.positive_iou = num(v).map_err(bad)?,
            "pipeline.box_extent" => p.roi.box_extent = num(v).map_err(bad)?,
            "pipeline.mask_roi_extent" => p.roi.mask_roi_extent = num(v).map_err(bad)?,
            "pipeline.mask_extent" => p.roi.mask_extent = num(v).map_err(bad)?,
            "pipeline.sampling_ratio" => p.roi.sampling_ratio = num(v).map_err(bad)?,
            "pipeline.box_hidden" => p.roi.box_hidden = num(v).map_err(bad)?,
            "pipeline.mask_channels" => {
                // the context module runs inside the mask head at its width
                p.roi.mask_channels = num(v).map_err(bad)?;
                p.slc.channels = p.roi.mask_channels;
            }
            "pipeline.mask_convs" => p.roi.mask_convs = num(v).map_err(bad)?,
            "pipeline.max_detections" => p.infer.max_detections = num(v).map_err(bad)?,
            "pipeline.score_threshold" => p.infer.score_threshold = num(v).map_err(bad)?,
            "pipeline.nms_iou" => p.infer.nms_iou = num(v).map_err(bad)?,
            "pipeline.mask_threshold" => p.infer.mask_threshold = num(v).map_err(bad)?,
            "pipeline.epochs" => p.epochs = num(v).map_err(bad)?,
            "pipeline.optimizer" => {
                p.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(bad(format!("expected `sgd` or `adam`, got `{v}`"))),
                }
            }
            "pipeline.lr" => p.sgd.lr = num(v).map_err(bad)?,
            "pipeline.momentum" => p.sgd.momentum = num(v).map_err(bad)?,
            "pipeline.weight_decay" => p.sgd.weight_decay = num(v).map_err(bad)?,
            "pipeline.clip_grad_norm" => p.clip_grad_norm = num(v).map_err(bad)?,
            "pipeline.warmup_iters" => p.warmup_iters = num(v).map_err(bad)?,
            "pipeline.lr_drop_epochs" => p.lr_drop_epochs = list(v).map_err(bad)?,
            "eval.iou_threshold" => self.eval.iou_threshold = num(v).map_err(bad)?,
            _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
        self.sync_augment();
        Ok(())
    }

    /// Textual value of one key, in the syntax [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let scene = &self.synth.scene;
        let p = &self.pipeline;
        let a = &self.augment;
        Some(match key {
            "seed" => self.seed.to_string(),
            "synth.count" => self.synth.count.to_string(),
            "synth.width" => scene.width.to_string(),
            "synth.height" => scene.height.to_string(),
            "synth.ships_min" => scene.ship_count.0.to_string(),
            "synth.ships_max" => scene.ship_count.1.to_string(),
            "synth.length_min" => scene.length.0.to_string(),
            "synth.length_max" => scene.length.1.to_string(),
            "synth.beam_min" => scene.beam.0.to_string(),
            "synth.beam_max" => scene.beam.1.to_string(),
            "synth.dock_probability" => scene.dock_probability.to_string(),
            "synth.heading_min" => scene.orientation.0.to_string(),
            "synth.heading_max" => scene.orientation.1.to_string(),
            "synth.noise" => scene.noise.to_string(),
            "synth.train_parts" => self.synth.train_parts.to_string(),
            "synth.test_parts" => self.synth.test_parts.to_string(),
            "slc.enabled" => p.slc.enabled.to_string(),
            "slc.r1" => p.slc.r1.to_string(),
            "slc.r2" => p.slc.r2.to_string(),
            "slc.fused_layers" => p.slc.fused_layers.to_string(),
            "slc.attach_cls_reg" => p.slc.attach_to_cls_reg.to_string(),
            "anchors.strides" => join(p.anchors.levels.iter().map(|l| l.stride)),
            "anchors.base_scale" => p.anchors.levels.first().map_or(0.0, |l| l.base_scale).to_string(),
            "anchors.multipliers" => join(&p.anchors.scale_multipliers),
            "anchors.ratios" => join(&p.anchors.aspect_ratios),
            "tiles.size" => self.tiles.size.to_string(),
            "tiles.dedup_iou" => self.tiles.dedup_iou.to_string(),
            "augment.enabled" => self.augment_enabled.to_string(),
            "augment.brightness" => pair(a.brightness),
            "augment.contrast" => pair(a.contrast),
            "augment.color" => pair(a.color),
            "augment.sharpness" => pair(a.sharpness),
            "augment.rotation" => pair(a.rotation),
            "pipeline.stage_channels" => join(&p.backbone.stage_channels),
            "pipeline.stage_strides" => join(&p.backbone.stage_strides),
            "pipeline.pyramid_levels" => p.backbone.pyramid_levels.to_string(),
            "pipeline.fpn_channels" => p.backbone.fpn_channels.to_string(),
            "pipeline.pixel_mean" => join(&p.backbone.pixel_mean),
            "pipeline.pixel_std" => join(&p.backbone.pixel_std),
            "pipeline.rpn_pre_nms_train" => p.rpn.pre_nms_top_train.to_string(),
            "pipeline.rpn_pre_nms_infer" => p.rpn.pre_nms_top_infer.to_string(),
            "pipeline.rpn_post_nms_train" => p.rpn.post_nms_top_train.to_string(),
            "pipeline.rpn_post_nms_infer" => p.rpn.post_nms_top_infer.to_string(),
            "pipeline.rpn_nms_iou" => p.rpn.nms_iou.to_string(),
            "pipeline.rpn_positive_iou" => p.rpn.positive_iou.to_string(),
            "pipeline.rpn_negative_iou" => p.rpn.negative_iou.to_string(),
            "pipeline.rpn_anchors_per_image" => p.rpn.anchors_per_image.to_string(),
            "pipeline.rpn_positive_fraction" => p.rpn.positive_fraction.to_string(),
            "pipeline.rois_per_image" => p.roi.rois_per_image.to_string(),
            "pipeline.roi_positive_parts" => p.roi.positive_parts.to_string(),
            "pipeline.roi_negative_parts" => p.roi.negative_parts.to_string(),
            "pipeline.roi_positive_iou" => p.roi.positive_iou.to_string(),
            "pipeline.box_extent" => p.roi.box_extent.to_string(),
            "pipeline.mask_roi_extent" => p.roi.mask_roi_extent.to_string(),
            "pipeline.mask_extent" => p.roi.mask_extent.to_string(),
            "pipeline.sampling_ratio" => p.roi.sampling_ratio.to_string(),
            "pipeline.box_hidden" => p.roi.box_hidden.to_string(),
            "pipeline.mask_channels" => p.roi.mask_channels.to_string(),
            "pipeline.mask_convs" => p.roi.mask_convs.to_string(),
            "pipeline.max_detections" => p.infer.max_detections.to_string(),
            "pipeline.score_threshold" => p.infer.score_threshold.to_string(),
            "pipeline.nms_iou" => p.infer.nms_iou.to_string(),
            "pipeline.mask_threshold" => p.infer.mask_threshold.to_string(),
            "pipeline.epochs" => p.epochs.to_string(),
            "pipeline.optimizer" => match p.optimizer {
                OptimizerKind::Sgd => "sgd".to_string(),
                OptimizerKind::Adam => "adam".to_string(),
            },
            "pipeline.lr" => p.sgd.lr.to_string(),
            "pipeline.momentum" => p.sgd.momentum.to_string(),
            "pipeline.weight_decay" => p.sgd.weight_decay.to_string(),
            "pipeline.clip_grad_norm" => p.clip_grad_norm.to_string(),
            "pipeline.warmup_iters" => p.warmup_iters.to_string(),
            "pipeline.lr_drop_epochs" => join(&p.lr_drop_epochs),
            "eval.iou_threshold" => self.eval.iou_threshold.to_string(),
            _ => return None,
        })
    }

    fn sync_augment(&mut self) {
        self.pipeline.augment = self.augment_enabled.then_some(self.augment);
    }

    /// Applies every assignment of a config file body; `origin` names the
    /// source in diagnostics.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("{origin}:{}: expected `key = value`, got `{line}`", lineno + 1)));
            };
            self.set(key.trim(), value)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies `--key=value` overrides (the leading dashes are optional).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> CliResult<()> {
        for o in overrides {
            let o = o.as_ref().trim_start_matches('-');
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not of the form --key=value")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Fully resolved configuration, one `key = value` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let value = self.get(key).expect("every listed key renders");
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Checks cross-field invariants of the resolved configuration.
    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: slcmask_core::Error| CliError::Usage(format!("invalid configuration: {e}"));
        self.synth.scene.validate().map_err(usage)?;
        self.pipeline.validate().map_err(usage)?;
        if self.synth.train_parts == 0 {
            return Err(CliError::Usage("synth.train_parts must be positive".into()));
        }
        if self.tiles.size == 0 || !(0.0..=1.0).contains(&self.tiles.dedup_iou) {
            return Err(CliError::Usage("tiles.size must be positive and tiles.dedup_iou in [0, 1]".into()));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(CliError::Usage("eval.iou_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One variant per line of an ablation grid file: whitespace-separated
/// `key=value` pairs over the `slc.*` keys, applied on top of `base`.
pub fn parse_grid(text: &str, base: &SlcConfig) -> CliResult<Vec<SlcConfig>> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut cfg = RunConfig::default();
        cfg.pipeline.slc = *base;
        for pair in line.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("grid line {}: `{pair}` is not key=value", lineno + 1)))?;
            let key = if key.starts_with("slc.") { key.to_string() } else { format!("slc.{key}") };
            cfg.set(&key, value)
                .map_err(|e| CliError::Usage(format!("grid line {}: {e}", lineno + 1)))?;
        }
        cfg.pipeline.slc.validate().map_err(|e| CliError::Usage(format!("grid line {}: {e}", lineno + 1)))?;
        rows.push(cfg.pipeline.slc);
    }
    Ok(rows)
}

/// Renders a grid in the syntax [`parse_grid`] reads.
pub fn render_grid(grid: &[SlcConfig]) -> String {
    grid.iter()
        .map(|s| {
            format!(
                "enabled={} r1={} r2={} fused_layers={} attach_cls_reg={}\n",
                s.enabled, s.r1, s.r2, s.fused_layers, s.attach_to_cls_reg
            )
        })
        .collect()
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(s.trim())).collect()
}

fn triple(v: &str) -> Result<[f64; 3], String> {
    let l: Vec<f64> = list(v)?;
    l.try_into().map_err(|_| format!("expected three values, got `{v}`"))
}

fn range(v: &str) -> Result<FactorRange, String> {
    match list::<f64>(v)?.as_slice() {
        &[lo, hi] => Ok(FactorRange::new(lo, hi)),
        _ => Err(format!("expected `lo,hi`, got `{v}`")),
    }
}

fn pair(r: FactorRange) -> String {
    format!("{},{}", r.lo, r.hi)
}

fn join<T: Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
