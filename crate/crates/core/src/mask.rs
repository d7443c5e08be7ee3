//! Binary instance masks and labelled annotations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Full-image binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl InstanceMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::ShapeMismatch {
                op: "instance_mask",
                axis: "pixels",
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    /// Every pixel whose centre lies inside `b`.
    pub fn from_box(width: usize, height: usize, b: &BBox) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if b.contains_point(x as f64 + 0.5, y as f64 + 0.5) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight pixel bounds `[min_x, min_y, max_x + 1, max_y + 1]`.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        (x1 != usize::MAX).then(|| BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
    }

    pub fn intersection_count(&self, other: &InstanceMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn iou(&self, other: &InstanceMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Dilation by one pixel with the 3x3 (8-connected) structuring element.
    pub fn dilate(&self) -> InstanceMask {
        let mut out = Self::empty(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                for ny in y.saturating_sub(1)..=(y + 1).min(self.height - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(self.width - 1) {
                        out.set(nx, ny, true);
                    }
                }
            }
        }
        out
    }

    /// True when some pixel of `self` is 8-adjacent to (or on) a pixel of `other`.
    pub fn touches(&self, other: &InstanceMask) -> bool {
        self.dilate().intersection_count(other) > 0
    }

    /// Samples the mask on an `out x out` grid spanning `b` (cell centres,
    /// nearest pixel). Returns 0/1 values, row-major.
    pub fn crop_resample(&self, b: &BBox, out: usize) -> Vec<f64> {
        let mut v = vec![0.0; out * out];
        let bw = b.width() / out as f64;
        let bh = b.height() / out as f64;
        for i in 0..out {
            let y = b.y1 + (i as f64 + 0.5) * bh;
            for j in 0..out {
                let x = b.x1 + (j as f64 + 0.5) * bw;
                if x >= 0.0 && y >= 0.0 {
                    let (px, py) = (x as usize, y as usize);
                    if px < self.width && py < self.height && self.get(px, py) {
                        v[i * out + j] = 1.0;
                    }
                }
            }
        }
        v
    }

    /// Pastes an `m x m` probability grid covering `b` into a full-image mask,
    /// bilinearly resampled at each pixel centre and thresholded at `threshold`.
    pub fn paste(probs: &[f64], m: usize, b: &BBox, width: usize, height: usize, threshold: f64) -> Self {
        let mut out = Self::empty(width, height);
        if b.width() <= 0.0 || b.height() <= 0.0 || m == 0 {
            return out;
        }
        let x0 = libm::floor(b.x1).max(0.0) as usize;
        let y0 = libm::floor(b.y1).max(0.0) as usize;
        let x1 = (libm::ceil(b.x2).max(0.0) as usize).min(width);
        let y1 = (libm::ceil(b.y2).max(0.0) as usize).min(height);
        let sx = m as f64 / b.width();
        let sy = m as f64 / b.height();
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            if py < b.y1 || py >= b.y2 {
                continue;
            }
            let gy = ((py - b.y1) * sy - 0.5).clamp(0.0, (m - 1) as f64);
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                if px < b.x1 || px >= b.x2 {
                    continue;
                }
                let gx = ((px - b.x1) * sx - 0.5).clamp(0.0, (m - 1) as f64);
                let (iy, ix) = (gy as usize, gx as usize);
                let (iy2, ix2) = ((iy + 1).min(m - 1), (ix + 1).min(m - 1));
                let (ly, lx) = (gy - iy as f64, gx - ix as f64);
                let v = (1.0 - ly) * ((1.0 - lx) * probs[iy * m + ix] + lx * probs[iy * m + ix2])
                    + ly * ((1.0 - lx) * probs[iy2 * m + ix] + lx * probs[iy2 * m + ix2]);
                if v >= threshold {
                    out.set(x, y, true);
                }
            }
        }
        out
    }
}

/// One labelled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class_id: u32,
    pub bbox: BBox,
    pub mask: InstanceMask,
}

impl Annotation {
    /// Annotation whose box is the tight bound of `mask`; None for an empty mask.
    pub fn from_mask(class_id: u32, mask: InstanceMask) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self { class_id, bbox, mask })
    }
}
