//! Axis-aligned boxes, anchor generation, box-delta coding, NMS and tiling.

mod anchors;
mod nms;
mod tiling;

pub use anchors::{generate_anchors, AnchorLevel, AnchorSet};
pub use nms::{nms, nms_indices};
pub use tiling::{tile_image, Tile, TileSpec};

use crate::error::{Error, Result};

/// Box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: Option<f64>,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2, score: None }
    }

    pub fn scored(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    /// Box of the given size centred on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
            score: self.score,
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
            score: self.score,
        }
    }
}

/// Intersection over union; symmetric in its arguments.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    // sum of areas is commutative, so iou(a, b) == iou(b, a) bit for bit
    inter / (a.area() + b.area() - inter)
}

/// Regression target `(dx, dy, dw, dh)` taking `anchor` to `gt`.
pub fn encode_deltas(anchor: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 || gt.width() <= 0.0 || gt.height() <= 0.0 {
        return Err(Error::invalid("encode_deltas", "boxes must have positive width and height"));
    }
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    Ok([
        (gx - ax) / anchor.width(),
        (gy - ay) / anchor.height(),
        libm::log(gt.width() / anchor.width()),
        libm::log(gt.height() / anchor.height()),
    ])
}

/// Largest log-scale change accepted by [`decode_deltas`] (`ln(1000 / 16)`).
pub const MAX_LOG_SCALE: f64 = 4.135166556742356;

/// Applies regression deltas to `anchor`. Scale deltas are capped at
/// [`MAX_LOG_SCALE`]; the result is clipped to `bounds = (width, height)` when given.
pub fn decode_deltas(anchor: &BBox, deltas: [f64; 4], bounds: Option<(f64, f64)>) -> Result<BBox> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::invalid("decode_deltas", "anchor must have positive width and height"));
    }
    let (ax, ay) = anchor.center();
    let (w, h) = (anchor.width(), anchor.height());
    let cx = ax + deltas[0] * w;
    let cy = ay + deltas[1] * h;
    let nw = w * libm::exp(deltas[2].min(MAX_LOG_SCALE));
    let nh = h * libm::exp(deltas[3].min(MAX_LOG_SCALE));
    let b = BBox {
        x1: cx - nw / 2.0,
        y1: cy - nh / 2.0,
        x2: cx + nw / 2.0,
        y2: cy + nh / 2.0,
        score: anchor.score,
    };
    Ok(match bounds {
        Some((bw, bh)) => b.clip(bw, bh),
        None => b,
    })
}
