//! Core of the `slcmask` instance-segmentation toolkit.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (only `alloc` is required):
//!
//! - [`tensor`] / [`autograd`] / [`optim`]: dense f64 tensors with a
//!   dynamically recorded reverse-mode graph, SGD with momentum and Adam.
//! - [`slc`]: the sequence local context block (chained dilated conv
//!   blocks fused by summation) and receptive-field arithmetic.
//! - [`geometry`]: boxes, anchors, delta coding, NMS and image tiling.
//! - [`augment`] / [`synth`] / [`stats`]: augmentation policy, the
//!   synthetic docked-ship scene generator and corpus statistics.
//! - [`pipeline`]: a small two-stage detector with a mask head.
//! - [`metrics`]: matching, recall, average precision and the ablation runner.
//!
//! File formats, PNG IO and the command-line front end live in the
//! `slcmask` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod autograd;
pub mod error;
pub mod geometry;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod slc;
pub mod stats;
pub mod synth;
pub mod tensor;

mod kernels;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use geometry::BBox;
pub use tensor::Tensor;
