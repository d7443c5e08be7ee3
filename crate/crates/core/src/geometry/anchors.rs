use alloc::vec::Vec;

use super::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorLevel {
    pub stride: usize,
    pub base_scale: f64,
}

/// Anchor geometry: one entry per level, and the same
/// `multipliers x ratios` templates at every location of every level.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub levels: Vec<AnchorLevel>,
    pub scale_multipliers: Vec<f64>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
}

impl AnchorSet {
    /// Base scales 32..512 doubling per level on strides 4..64, with the
    /// extra 0.707 multiplier and ratios 0.5, 1, 1.5.
    pub fn standard() -> Self {
        Self::doubling(&[4, 8, 16, 32, 64], 32.0)
    }

    /// Levels with the given strides and base scales `first, 2 first, ...`.
    pub fn doubling(strides: &[usize], first: f64) -> Self {
        let mut scale = first;
        let levels = strides
            .iter()
            .map(|&stride| {
                let l = AnchorLevel { stride, base_scale: scale };
                scale *= 2.0;
                l
            })
            .collect();
        Self {
            levels,
            scale_multipliers: alloc::vec![1.0, 0.707],
            aspect_ratios: alloc::vec![0.5, 1.0, 1.5],
        }
    }

    pub fn per_location(&self) -> usize {
        self.scale_multipliers.len() * self.aspect_ratios.len()
    }

    /// `(w, h)` of the templates of one level, ordered ratio-major.
    pub fn templates(&self, level: usize) -> Vec<(f64, f64)> {
        let base = self.levels[level].base_scale;
        let mut out = Vec::with_capacity(self.per_location());
        for &r in &self.aspect_ratios {
            let sr = libm::sqrt(r);
            for &m in &self.scale_multipliers {
                let side = m * base;
                out.push((side * sr, side / sr));
            }
        }
        out
    }
}

/// Anchors for every level, location and template, ordered
/// level -> row -> column -> ratio -> multiplier. `feature_extents[l]` is the
/// `(rows, cols)` of the feature map for level `l`.
pub fn generate_anchors(spec: &AnchorSet, feature_extents: &[(usize, usize)]) -> Vec<BBox> {
    let mut out = Vec::new();
    for (l, level) in spec.levels.iter().enumerate() {
        let Some(&(rows, cols)) = feature_extents.get(l) else { break };
        let templates = spec.templates(l);
        let s = level.stride as f64;
        for i in 0..rows {
            for j in 0..cols {
                let (cx, cy) = (s * (j as f64 + 0.5), s * (i as f64 + 0.5));
                for &(w, h) in &templates {
                    out.push(BBox::centered(cx, cy, w, h));
                }
            }
        }
    }
    out
}
