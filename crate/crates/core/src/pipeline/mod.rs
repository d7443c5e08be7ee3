//! A small two-stage detector: conv backbone with a two-level feature
//! pyramid, RPN, RoI sampling, RoIAlign, box head and a mask head with an
//! optional SLC block.
//!
//! RoI features for both heads are pooled from the finest pyramid level.

mod config;
mod infer;
mod model;
mod targets;
mod train;

pub use config::{BackboneConfig, InferConfig, PipelineConfig, RoiConfig, RpnConfig};
pub use infer::{infer, Detection};
pub use model::{Model, ModelVars, RpnLevel};
pub use targets::{propose, sample_anchors, sample_rois, AnchorSample, AnchorTable, SampledRois};
pub use train::{loss_graph, train, train_with, LossGraph, LossRecord, LossTerms, Sample, TrainLog, INITIAL_WINDOW};

/// Scaling of second-stage box deltas: targets are multiplied by these
/// weights for the loss and predictions divided by them when decoding.
pub const BOX_DELTA_WEIGHTS: [f64; 4] = [10.0, 10.0, 5.0, 5.0];
