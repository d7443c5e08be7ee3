//! Synthetic harbour scenes: oriented rectangular "ships" on a noisy sea, a
//! configurable share of them docked flush against an earlier ship.
//!
//! Ship pixels are owned by exactly one instance. A docked ship is rasterised
//! one pixel wider on the side facing its neighbour and then loses every pixel
//! already owned, so docked pairs always share an 8-connected boundary.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{Annotation, InstanceMask};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Ship intensity levels; neighbours in the list differ by 0.1 of the range.
pub const INTENSITY_LEVELS: [f64; 6] = [0.45, 0.55, 0.65, 0.75, 0.85, 0.95];

const SEA: [f64; 3] = [0.10, 0.16, 0.22];
const MAX_ATTEMPTS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of ships to place.
    pub ship_count: (usize, usize),
    /// Ship length range in pixels.
    pub length: (f64, f64),
    /// Ship beam (width) range in pixels.
    pub beam: (f64, f64),
    pub dock_probability: f64,
    /// Heading range in degrees.
    pub orientation: (f64, f64),
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl SceneSpec {
    /// Small dense-harbour scene used by the desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            width: 64,
            height: 64,
            ship_count: (3, 6),
            length: (16.0, 26.0),
            beam: (5.0, 8.0),
            dock_probability: 0.8,
            orientation: (0.0, 180.0),
            noise: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("synth_scene", m));
        if self.width == 0 || self.height == 0 {
            return bad("image extent must be positive");
        }
        if self.ship_count.0 > self.ship_count.1 {
            return bad("ship_count range is inverted");
        }
        if !(self.length.0 > 0.0 && self.length.0 <= self.length.1 && self.beam.0 > 0.0 && self.beam.0 <= self.beam.1) {
            return bad("ship size ranges must be positive and ordered");
        }
        if self.length.1 >= self.width.min(self.height) as f64 {
            return bad("ships must fit in the image");
        }
        if !(0.0..=1.0).contains(&self.dock_probability) {
            return bad("dock_probability must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative level");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShipGeometry {
    pub center: (f64, f64),
    pub length: f64,
    pub beam: f64,
    pub heading_deg: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
    pub ships: Vec<ShipGeometry>,
    /// `(earlier, later)` annotation indices placed flush against each other.
    pub docked_pairs: Vec<(usize, usize)>,
    pub requested: usize,
}

impl Scene {
    /// Ships that could not be placed within the retry budget.
    pub fn shortfall(&self) -> usize {
        self.requested - self.annotations.len()
    }
}

/// Pixels whose centres fall inside the oriented rectangle. `inflate_side`
/// widens the rectangle by one pixel towards `+v` (1.0) or `-v` (-1.0).
fn rasterize(w: usize, h: usize, g: &ShipGeometry, inflate_side: f64) -> InstanceMask {
    let t = g.heading_deg.to_radians();
    let (ux, uy) = (libm::cos(t), libm::sin(t));
    let (vx, vy) = (-uy, ux);
    let half_l = g.length / 2.0;
    let (lo_v, hi_v) = {
        let hb = g.beam / 2.0;
        if inflate_side > 0.0 {
            (-hb, hb + 1.0)
        } else if inflate_side < 0.0 {
            (-hb - 1.0, hb)
        } else {
            (-hb, hb)
        }
    };
    let mut m = InstanceMask::empty(w, h);
    let reach = half_l + g.beam + 2.0;
    let (cx, cy) = g.center;
    let x0 = libm::floor(cx - reach).max(0.0) as usize;
    let y0 = libm::floor(cy - reach).max(0.0) as usize;
    let x1 = (libm::ceil(cx + reach).max(0.0) as usize).min(w);
    let y1 = (libm::ceil(cy + reach).max(0.0) as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let a = dx * ux + dy * uy;
            let b = dx * vx + dy * vy;
            if a.abs() <= half_l && b >= lo_v && b <= hi_v {
                m.set(x, y, true);
            }
        }
    }
    m
}

fn corners_inside(g: &ShipGeometry, w: usize, h: usize) -> bool {
    let t = g.heading_deg.to_radians();
    let (ux, uy) = (libm::cos(t), libm::sin(t));
    let (vx, vy) = (-uy, ux);
    let (hl, hb) = (g.length / 2.0, g.beam / 2.0 + 1.0);
    [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().all(|&(a, b)| {
        let x = g.center.0 + a * hl * ux + b * hb * vx;
        let y = g.center.1 + a * hl * uy + b * hb * vy;
        x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64
    })
}

/// Renders one scene. Identical `(spec, seed)` gives a pixel-identical scene.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed);
    let (w, h) = (spec.width, spec.height);
    let requested = rng.int_inclusive(spec.ship_count.0, spec.ship_count.1);

    let mut palette = INTENSITY_LEVELS;
    rng.shuffle(&mut palette);

    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut masks: Vec<InstanceMask> = Vec::new();
    let mut ships: Vec<ShipGeometry> = Vec::new();
    let mut docked_pairs = Vec::new();

    for _ in 0..requested {
        let intensity = palette[ships.len() % palette.len()];
        let dock = !ships.is_empty() && rng.chance(spec.dock_probability);
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let length = rng.uniform(spec.length.0, spec.length.1);
            let beam = rng.uniform(spec.beam.0, spec.beam.1);
            let candidate = if dock {
                let j = rng.below(ships.len());
                let host = ships[j];
                let t = host.heading_deg.to_radians();
                let (ux, uy) = (libm::cos(t), libm::sin(t));
                let (vx, vy) = (-uy, ux);
                let side = if rng.chance(0.5) { 1.0 } else { -1.0 };
                let gap = rng.uniform(0.0, 1.0);
                let offset = host.beam / 2.0 + beam / 2.0 + gap;
                let slide = rng.uniform(-0.25, 0.25) * host.length;
                let g = ShipGeometry {
                    center: (
                        host.center.0 + side * offset * vx + slide * ux,
                        host.center.1 + side * offset * vy + slide * uy,
                    ),
                    length,
                    beam,
                    heading_deg: host.heading_deg,
                    intensity,
                };
                // inflate towards the host, which lies on the -side of the new ship
                Some((g, Some(j), -side))
            } else {
                let heading = rng.uniform(spec.orientation.0, spec.orientation.1);
                let g = ShipGeometry {
                    center: (rng.uniform(0.0, w as f64), rng.uniform(0.0, h as f64)),
                    length,
                    beam,
                    heading_deg: heading,
                    intensity,
                };
                Some((g, None, 0.0))
            };
            let Some((g, host, inflate)) = candidate else { continue };
            if !corners_inside(&g, w, h) {
                continue;
            }
            let raw = rasterize(w, h, &g, inflate);
            let raw_count = raw.count();
            if raw_count == 0 {
                continue;
            }
            let mut taken = 0;
            let mut touches_other = false;
            for (i, &b) in raw.bits().iter().enumerate() {
                if b {
                    if let Some(o) = owner[i] {
                        taken += 1;
                        if Some(o) != host {
                            touches_other = true;
                        }
                    }
                }
            }
            if touches_other {
                continue;
            }
            match host {
                // a free ship may not touch any earlier ship
                None => {
                    let grown = raw.dilate();
                    if grown.bits().iter().zip(&owner).any(|(&b, o)| b && o.is_some()) {
                        continue;
                    }
                }
                Some(_) => {
                    if taken * 4 > raw_count {
                        continue;
                    }
                }
            }
            let mut mask = raw;
            for (i, o) in owner.iter().enumerate() {
                if o.is_some() && mask.bits()[i] {
                    mask.set(i % w, i / w, false);
                }
            }
            if let Some(j) = host {
                if !mask.touches(&masks[j]) {
                    continue;
                }
            }
            placed = Some((g, host, mask));
            break;
        }
        if let Some((g, host, mask)) = placed {
            let idx = ships.len();
            for (i, &b) in mask.bits().iter().enumerate() {
                if b {
                    owner[i] = Some(idx);
                }
            }
            if let Some(j) = host {
                docked_pairs.push((j, idx));
            }
            ships.push(g);
            masks.push(mask);
        }
    }

    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        let (tint, level) = match owner[i] {
            Some(k) => ([0.97, 1.0, 0.98], ships[k].intensity),
            None => ([1.0, 1.0, 1.0], 1.0),
        };
        for c in 0..3 {
            let base = if owner[i].is_some() { level * tint[c] } else { SEA[c] };
            data[c * plane + i] = (base + spec.noise * rng.normal()).clamp(0.0, 1.0);
        }
    }

    let annotations = masks
        .into_iter()
        .map(|m| Annotation::from_mask(0, m).expect("placed masks are non-empty"))
        .collect();
    Ok(Scene {
        image: Tensor::new([1, 3, h, w], data)?,
        annotations,
        ships,
        docked_pairs,
        requested,
    })
}
