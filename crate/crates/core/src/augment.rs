//! Random photometric and rotation augmentation.
//!
//! Images are `[1, 3, H, W]` tensors with values in `[0, 1]`. Photometric
//! enhancements blend the image with a degenerate version of itself (a
//! constant brightness-zero image, the mean grey, the per-pixel grey, a 3x3
//! smoothed copy) by a random factor, in that order; a factor of exactly 1 is
//! the identity. Rotation is about the image centre: pixels are resampled
//! bilinearly, masks by nearest neighbour, and boxes are re-enclosed from
//! their rotated corners.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::{Annotation, InstanceMask};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorRange {
    pub lo: f64,
    pub hi: f64,
}

impl FactorRange {
    pub const IDENTITY: FactorRange = FactorRange { lo: 1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut SeededRng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub brightness: FactorRange,
    pub contrast: FactorRange,
    pub color: FactorRange,
    pub sharpness: FactorRange,
    /// Rotation range in degrees, `[lo, hi)`.
    pub rotation: FactorRange,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            brightness: FactorRange::new(0.8, 1.2),
            contrast: FactorRange::new(0.8, 1.2),
            color: FactorRange::new(0.8, 1.2),
            sharpness: FactorRange::new(0.8, 1.2),
            rotation: FactorRange::new(0.0, 360.0),
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            brightness: FactorRange::IDENTITY,
            contrast: FactorRange::IDENTITY,
            color: FactorRange::IDENTITY,
            sharpness: FactorRange::IDENTITY,
            rotation: FactorRange::new(0.0, 0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.brightness, self.contrast, self.color, self.sharpness] {
            if !(r.lo > 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
                return Err(Error::invalid("augment", "factor ranges need 0 < lo <= hi < inf"));
            }
        }
        let r = self.rotation;
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
            return Err(Error::invalid("augment", "rotation range needs finite lo <= hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
    /// Input indices of annotations that rotated out of the image.
    pub dropped: Vec<usize>,
    pub rotation_degrees: f64,
}

/// Augments with a generator seeded from `policy.seed`.
pub fn augment(image: &Tensor, annotations: &[Annotation], policy: &AugmentPolicy) -> Result<Augmented> {
    let mut rng = SeededRng::new(policy.seed);
    augment_with(image, annotations, policy, &mut rng)
}

pub fn augment_with(
    image: &Tensor,
    annotations: &[Annotation],
    policy: &AugmentPolicy,
    rng: &mut SeededRng,
) -> Result<Augmented> {
    policy.validate()?;
    let [n, c, h, w] = image.dims4("augment")?;
    if n != 1 || c != 3 {
        return Err(Error::invalid("augment", "expected a [1, 3, H, W] image"));
    }
    let factors = [
        policy.brightness.sample(rng),
        policy.contrast.sample(rng),
        policy.color.sample(rng),
        policy.sharpness.sample(rng),
    ];
    let angle = policy.rotation.sample(rng);

    let mut data = image.data().to_vec();
    if factors[0] != 1.0 {
        let zero = vec![0.0; data.len()];
        blend(&mut data, &zero, factors[0]);
    }
    if factors[1] != 1.0 {
        let g = grey(&data, h * w);
        let mean = g.iter().sum::<f64>() / g.len().max(1) as f64;
        let flat = vec![mean; data.len()];
        blend(&mut data, &flat, factors[1]);
    }
    if factors[2] != 1.0 {
        let g = grey(&data, h * w);
        let degenerate: Vec<f64> = (0..3).flat_map(|_| g.iter().copied()).collect();
        blend(&mut data, &degenerate, factors[2]);
    }
    if factors[3] != 1.0 {
        let smooth = smoothed(&data, h, w);
        blend(&mut data, &smooth, factors[3]);
    }

    let mut anns: Vec<Annotation> = annotations.to_vec();
    let mut dropped = Vec::new();
    let rot = Rotation::new(angle, w, h);
    if let Some(rot) = rot {
        data = rot.image(&data, w, h);
        let mut kept = Vec::with_capacity(anns.len());
        for (i, a) in anns.into_iter().enumerate() {
            let mask = rot.mask(&a.mask);
            let bbox = rot.bbox(&a.bbox).clip(w as f64, h as f64);
            if mask.is_empty() || !bbox.is_valid() {
                dropped.push(i);
            } else {
                kept.push(Annotation { class_id: a.class_id, bbox, mask });
            }
        }
        anns = kept;
    }

    Ok(Augmented {
        image: Tensor::new([1, 3, h, w], data)?,
        annotations: anns,
        dropped,
        rotation_degrees: angle,
    })
}

/// `out = degenerate + (x - degenerate) * f`, clamped to `[0, 1]`.
fn blend(x: &mut [f64], degenerate: &[f64], f: f64) {
    for (v, d) in x.iter_mut().zip(degenerate) {
        *v = (d + (*v - d) * f).clamp(0.0, 1.0);
    }
}

fn grey(data: &[f64], plane: usize) -> Vec<f64> {
    (0..plane)
        .map(|i| 0.299 * data[i] + 0.587 * data[plane + i] + 0.114 * data[2 * plane + i])
        .collect()
}

/// 3x3 smoothing (centre weight 5, others 1, /13); border pixels unchanged.
fn smoothed(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..3 {
        let p = &data[c * h * w..][..h * w];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * p[y * w + x];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += p[(y + dy - 1) * w + (x + dx - 1)];
                    }
                }
                out[c * h * w + y * w + x] = acc / 13.0;
            }
        }
    }
    out
}

/// Rotation by `angle` degrees (counter-clockwise in image coordinates with
/// y pointing down, i.e. clockwise on screen) about the image centre.
struct Rotation {
    cos: f64,
    sin: f64,
    cx: f64,
    cy: f64,
}

impl Rotation {
    fn new(angle_deg: f64, w: usize, h: usize) -> Option<Self> {
        let mut a = angle_deg % 360.0;
        if a < 0.0 {
            a += 360.0;
        }
        if a == 0.0 {
            return None;
        }
        let (cos, sin) = if a == 90.0 {
            (0.0, 1.0)
        } else if a == 180.0 {
            (-1.0, 0.0)
        } else if a == 270.0 {
            (0.0, -1.0)
        } else {
            let r = a.to_radians();
            (libm::cos(r), libm::sin(r))
        };
        Some(Self { cos, sin, cx: w as f64 / 2.0, cy: h as f64 / 2.0 })
    }

    fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cx + self.cos * dx - self.sin * dy, self.cy + self.sin * dx + self.cos * dy)
    }

    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cx + self.cos * dx + self.sin * dy, self.cy - self.sin * dx + self.cos * dy)
    }

    fn image(&self, data: &[f64], w: usize, h: usize) -> Vec<f64> {
        let plane = w * h;
        let mut out = vec![0.0; data.len()];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.inverse(x as f64 + 0.5, y as f64 + 0.5);
                // pixel-centre convention -> grid coordinates
                let (gx, gy) = (sx - 0.5, sy - 0.5);
                if gx < -0.5 || gy < -0.5 || gx > w as f64 - 0.5 || gy > h as f64 - 0.5 {
                    continue;
                }
                let gx = gx.clamp(0.0, (w - 1) as f64);
                let gy = gy.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (gx as usize, gy as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (lx, ly) = (gx - x0 as f64, gy - y0 as f64);
                for c in 0..3 {
                    let p = &data[c * plane..][..plane];
                    out[c * plane + y * w + x] = (1.0 - ly) * ((1.0 - lx) * p[y0 * w + x0] + lx * p[y0 * w + x1])
                        + ly * ((1.0 - lx) * p[y1 * w + x0] + lx * p[y1 * w + x1]);
                }
            }
        }
        out
    }

    fn mask(&self, m: &InstanceMask) -> InstanceMask {
        let (w, h) = (m.width(), m.height());
        let mut out = InstanceMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.inverse(x as f64 + 0.5, y as f64 + 0.5);
                let (fx, fy) = (libm::floor(sx), libm::floor(sy));
                if fx >= 0.0 && fy >= 0.0 && (fx as usize) < w && (fy as usize) < h && m.get(fx as usize, fy as usize) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    fn bbox(&self, b: &BBox) -> BBox {
        let corners = [(b.x1, b.y1), (b.x2, b.y1), (b.x1, b.y2), (b.x2, b.y2)].map(|(x, y)| self.forward(x, y));
        let xs = corners.map(|c| c.0);
        let ys = corners.map(|c| c.1);
        let min = |v: [f64; 4]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: [f64; 4]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        BBox { x1: min(xs), y1: min(ys), x2: max(xs), y2: max(ys), score: b.score }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SceneSpec};

    fn scene() -> (Tensor, Vec<Annotation>) {
        let s = synth_scene(&SceneSpec::desk(), 3).unwrap();
        (s.image, s.annotations)
    }

    #[test]
    fn identity_policy_is_identity() {
        let (img, anns) = scene();
        let out = augment(&img, &anns, &AugmentPolicy::identity()).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.annotations, anns);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn right_angle_preserves_mask_counts_and_box_areas() {
        let (img, anns) = scene();
        let policy = AugmentPolicy { rotation: FactorRange::new(90.0, 90.0), ..AugmentPolicy::identity() };
        let out = augment(&img, &anns, &policy).unwrap();
        assert_eq!(out.annotations.len(), anns.len());
        for (a, b) in anns.iter().zip(&out.annotations) {
            assert_eq!(a.mask.count(), b.mask.count());
            assert_eq!(a.bbox.area(), b.bbox.area());
            // the re-enclosed box is the tight bound of the rotated mask
            assert_eq!(b.mask.bbox().unwrap().area(), b.bbox.area());
        }
    }

    #[test]
    fn same_seed_same_output() {
        let (img, anns) = scene();
        let p = AugmentPolicy { seed: 99, ..Default::default() };
        let a = augment(&img, &anns, &p).unwrap();
        let b = augment(&img, &anns, &p).unwrap();
        assert_eq!(a, b);
        let c = augment(&img, &anns, &AugmentPolicy { seed: 100, ..p }).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn photometric_only_leaves_annotations() {
        let (img, anns) = scene();
        let p = AugmentPolicy { rotation: FactorRange::new(0.0, 0.0), seed: 5, ..Default::default() };
        let out = augment(&img, &anns, &p).unwrap();
        assert_eq!(out.annotations, anns);
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rotation_never_adds_instances() {
        let (img, anns) = scene();
        for seed in 0..10 {
            let out = augment(&img, &anns, &AugmentPolicy { seed, ..Default::default() }).unwrap();
            assert_eq!(out.annotations.len() + out.dropped.len(), anns.len());
        }
    }

    #[test]
    fn rejects_bad_policy() {
        let (img, anns) = scene();
        let p = AugmentPolicy { brightness: FactorRange::new(0.0, 1.0), ..Default::default() };
        assert!(augment(&img, &anns, &p).is_err());
    }
}
