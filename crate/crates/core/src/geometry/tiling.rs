use alloc::vec::Vec;

use super::{nms_indices, BBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileSpec {
    pub tile_size: usize,
    pub dedup_iou: f64,
    /// `(width, height)` of the source image.
    pub image_extent: (usize, usize),
}

impl TileSpec {
    pub fn new(image_extent: (usize, usize)) -> Self {
        Self {
            tile_size: 1024,
            dedup_iou: 0.1,
            image_extent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    /// Tile frame; `score` holds the number of object centres it contains.
    pub bbox: BBox,
    /// Index of the centre the tile was cut around.
    pub center_index: usize,
}

impl Tile {
    /// Integer pixel origin of the tile.
    pub fn origin(&self) -> (usize, usize) {
        (self.bbox.x1 as usize, self.bbox.y1 as usize)
    }
}

/// Candidate origin along one axis: centred on `c`, moved inward to fit.
fn axis_origin(c: f64, tile: usize, extent: usize) -> usize {
    if tile >= extent {
        return 0;
    }
    let start = libm::floor(c - tile as f64 / 2.0);
    (start.max(0.0) as usize).min(extent - tile)
}

/// Cuts one `tile_size` square per object centre (translated inward at the
/// borders, clamped to the image when the image is smaller), scores each by
/// the number of centres it contains and removes overlapping tiles with NMS
/// at `dedup_iou`. Equal scores keep the tile of the lower centre index.
pub fn tile_image(centers: &[(f64, f64)], spec: &TileSpec) -> Result<Vec<Tile>> {
    let (w, h) = spec.image_extent;
    if spec.tile_size == 0 || w == 0 || h == 0 {
        return Err(Error::invalid("tile_image", "tile and image extents must be positive"));
    }
    if let Some(i) = centers
        .iter()
        .position(|&(x, y)| !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64))
    {
        return Err(Error::invalid("tile_image", alloc::format!("centre {i} lies outside the image")));
    }
    let candidates: Vec<BBox> = centers
        .iter()
        .map(|&(cx, cy)| {
            let x1 = axis_origin(cx, spec.tile_size, w);
            let y1 = axis_origin(cy, spec.tile_size, h);
            let tile = BBox::new(
                x1 as f64,
                y1 as f64,
                (x1 + spec.tile_size).min(w) as f64,
                (y1 + spec.tile_size).min(h) as f64,
            );
            let count = centers.iter().filter(|&&(x, y)| tile.contains_point(x, y)).count();
            tile.scored(count as f64)
        })
        .collect();
    Ok(nms_indices(&candidates, spec.dedup_iou)?
        .into_iter()
        .map(|i| Tile { bbox: candidates[i], center_index: i })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    #[test]
    fn one_center_one_tile() {
        let spec = TileSpec::new((16384, 16384));
        let tiles = tile_image(&[(5000.0, 7000.0)], &spec).unwrap();
        assert_eq!(tiles.len(), 1);
        let b = tiles[0].bbox;
        assert_eq!((b.width(), b.height()), (1024.0, 1024.0));
        assert_eq!(b.center(), (5000.0, 7000.0));
    }

    #[test]
    fn near_centers_merge_far_centers_do_not() {
        let spec = TileSpec::new((16384, 16384));
        let near = tile_image(&[(5000.0, 5000.0), (5008.0, 5000.0)], &spec).unwrap();
        assert_eq!(near.len(), 1);
        let far = tile_image(&[(3000.0, 3000.0), (7096.0, 3000.0)], &spec).unwrap();
        assert_eq!(far.len(), 2);
    }

    #[test]
    fn border_tiles_translate_inward() {
        let spec = TileSpec::new((2048, 1500));
        let tiles = tile_image(&[(10.0, 1490.0)], &spec).unwrap();
        let b = tiles[0].bbox;
        assert_eq!(b.coords(), [0.0, 476.0, 1024.0, 1500.0]);
    }

    #[test]
    fn small_image_clamps() {
        let spec = TileSpec { tile_size: 256, dedup_iou: 0.1, image_extent: (100, 300) };
        let b = tile_image(&[(50.0, 150.0)], &spec).unwrap()[0].bbox;
        assert_eq!(b.coords(), [0.0, 22.0, 100.0, 278.0]);
    }

    #[test]
    fn candidates_iou_for_eight_pixel_shift() {
        let a = BBox::new(0.0, 0.0, 1024.0, 1024.0);
        let b = BBox::new(8.0, 0.0, 1032.0, 1024.0);
        assert!((iou(&a, &b) - 1016.0 / 1032.0).abs() < 1e-15);
        assert!(iou(&a, &b) > 0.98);
    }

    #[test]
    fn empty_and_outside() {
        let spec = TileSpec::new((512, 512));
        assert!(tile_image(&[], &spec).unwrap().is_empty());
        assert!(tile_image(&[(600.0, 10.0)], &spec).is_err());
    }
}
