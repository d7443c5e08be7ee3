//! Corpus statistics: instance scale and aspect-ratio histograms.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::Annotation;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges; bin `i` is `[edges[i], edges[i + 1])`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Values below the first edge land in the first bin, values at or above
    /// the last edge in the last bin, so counts always sum to the input size.
    pub fn build(edges: Vec<f64>, values: &[f64]) -> Self {
        let bins = edges.len().saturating_sub(1).max(1);
        let mut counts = vec![0; bins];
        for &v in values {
            let i = edges[1..edges.len().saturating_sub(1)].iter().take_while(|&&e| v >= e).count();
            counts[i.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub instances: usize,
    /// `sqrt(w * h)` of every instance box.
    pub scales: Vec<f64>,
    /// `max(w, h) / min(w, h)` of every instance box.
    pub aspects: Vec<f64>,
    pub scale_histogram: Histogram,
    pub aspect_histogram: Histogram,
}

/// Scale edges `4 * sqrt(2)^k` up to 1024 (anchor spacing with the 0.707 step).
pub fn default_scale_edges() -> Vec<f64> {
    (0..=16).map(|k| 4.0 * libm::pow(2.0, k as f64 / 2.0)).collect()
}

pub fn default_aspect_edges() -> Vec<f64> {
    vec![1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0]
}

pub fn dataset_stats<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> Result<DatasetStats> {
    let (mut scales, mut aspects) = (Vec::new(), Vec::new());
    for a in annotations {
        let (w, h) = (a.bbox.width(), a.bbox.height());
        scales.push(libm::sqrt(w * h));
        aspects.push(w.max(h) / w.min(h));
    }
    if scales.is_empty() {
        return Err(Error::invalid("dataset_stats", "corpus has no instances"));
    }
    Ok(DatasetStats {
        instances: scales.len(),
        scale_histogram: Histogram::build(default_scale_edges(), &scales),
        aspect_histogram: Histogram::build(default_aspect_edges(), &aspects),
        scales,
        aspects,
    })
}

/// Split of `n` items into train/test by `train_parts : test_parts`, test
/// rounded down.
pub fn train_test_split(n: usize, train_parts: usize, test_parts: usize) -> (usize, usize) {
    let total = train_parts + test_parts;
    if total == 0 {
        return (n, 0);
    }
    let test = n * test_parts / total;
    (n - test, test)
}
