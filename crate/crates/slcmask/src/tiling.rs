//! Tile planning for large scenes: one tile per object centre, deduplicated
//! by NMS, with annotations remapped into each tile's frame.

use slcmask_core::geometry::{tile_image, BBox, Tile, TileSpec};
use slcmask_core::rng::SeededRng;

use crate::config::TileConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{AnnotationFile, InstanceRecord};

/// Kept tiles and the annotations remapped into them.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub tiles: Vec<Tile>,
    /// Indices of centres outside the image, which were ignored.
    pub skipped: Vec<usize>,
    /// `tile` lines in source coordinates, `inst` lines in tile coordinates.
    pub file: AnnotationFile,
}

/// Plans tiles over a `width x height` image. Every instance whose box lies
/// fully inside a kept tile is copied into that tile, translated by the
/// tile's integer origin; instances may appear in several tiles.
pub fn plan_tiles(
    extent: (usize, usize),
    centers: &[(f64, f64)],
    instances: &[InstanceRecord],
    cfg: &TileConfig,
) -> CliResult<TilePlan> {
    let (w, h) = extent;
    let inside = |&(x, y): &(f64, f64)| x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64;
    let skipped: Vec<usize> = (0..centers.len()).filter(|&i| !inside(&centers[i])).collect();
    let kept_centers: Vec<(f64, f64)> = centers.iter().copied().filter(inside).collect();
    let spec = TileSpec { tile_size: cfg.size, dedup_iou: cfg.dedup_iou, image_extent: extent };
    let tiles = tile_image(&kept_centers, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut file = AnnotationFile::default();
    for (ti, t) in tiles.iter().enumerate() {
        file.tiles.push(BBox::new(t.bbox.x1, t.bbox.y1, t.bbox.x2, t.bbox.y2));
        let (ox, oy) = t.origin();
        for r in instances {
            let b = &r.bbox;
            if b.x1 >= t.bbox.x1 && b.y1 >= t.bbox.y1 && b.x2 <= t.bbox.x2 && b.y2 <= t.bbox.y2 {
                file.instances.push(r.shifted(ti, ox as i64, oy as i64));
            }
        }
    }
    Ok(TilePlan { tiles, skipped, file })
}

/// Maps every remapped instance back to source coordinates.
pub fn to_global(file: &AnnotationFile) -> Vec<InstanceRecord> {
    file.instances
        .iter()
        .map(|r| {
            let t = &file.tiles[r.tile];
            r.shifted(0, -(t.x1 as i64), -(t.y1 as i64))
        })
        .collect()
}

/// A large harbour layout: `count` ships scattered around `clusters` berths,
/// each a filled axis-aligned hull with integer-aligned box, and the ship
/// centres. Used to exercise tiling at scale without rendering pixels.
pub fn harbor_layout(extent: usize, count: usize, clusters: usize, seed: u64) -> (Vec<(f64, f64)>, Vec<InstanceRecord>) {
    let mut rng = SeededRng::derived(seed, "harbor");
    let margin = 64.0;
    let berths: Vec<(f64, f64)> = (0..clusters.max(1))
        .map(|_| (rng.uniform(margin, extent as f64 - margin), rng.uniform(margin, extent as f64 - margin)))
        .collect();
    let mut centers = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let (bx, by) = berths[i % berths.len()];
        let spread = 120.0;
        let cx = (bx + rng.uniform(-spread, spread)).clamp(margin, extent as f64 - margin).floor();
        let cy = (by + rng.uniform(-spread, spread)).clamp(margin, extent as f64 - margin).floor();
        let (len, beam) = (rng.int_inclusive(16, 40) as f64, rng.int_inclusive(5, 10) as f64);
        let (bw, bh) = if rng.chance(0.5) { (len, beam) } else { (beam, len) };
        let bbox = BBox::new(cx - (bw / 2.0).floor(), cy - (bh / 2.0).floor(), cx - (bw / 2.0).floor() + bw, cy - (bh / 2.0).floor() + bh);
        let bits = (0..(bw * bh) as usize).map(|k| k % 7 != 3).collect();
        centers.push((cx, cy));
        records.push(InstanceRecord { tile: 0, class_id: 1, bbox, bits });
    }
    (centers, records)
}
