//! Property tests over randomly generated inputs.

mod support;

use proptest::prelude::*;
use slcmask_core::autograd::{conv2d, ConvBlockSpec, Graph};
use slcmask_core::geometry::{decode_deltas, encode_deltas, iou, nms_indices, tile_image, BBox, TileSpec};
use slcmask_core::mask::{Annotation, InstanceMask};
use slcmask_core::metrics::{average_precision, match_predictions, recall, MatchMode, MatchRecord};
use slcmask_core::pipeline::Detection;
use slcmask_core::rng::SeededRng;
use slcmask_core::slc::slc_forward;
use slcmask_core::Tensor;
use support::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn scored_boxes(max: usize) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((bbox(), 0u8..10), 0..max).prop_map(|v| v.into_iter().map(|(b, s)| b.scored(s as f64 / 10.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_a_sparse_dominating_subset(boxes in scored_boxes(30), t in 0.0..1.0f64) {
        let kept = nms_indices(&boxes, t).unwrap();
        prop_assert_eq!(&kept, &nms_reference(&boxes, t));
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(iou(&boxes[a], &boxes[b]) <= t);
            }
        }
        // every dropped box is covered by a kept box scoring at least as high
        for d in (0..boxes.len()).filter(|i| !kept.contains(i)) {
            prop_assert!(kept.iter().any(|&k| iou(&boxes[k], &boxes[d]) > t && boxes[k].score >= boxes[d].score));
        }
        // running again on the survivors changes nothing
        let survivors: Vec<BBox> = kept.iter().map(|&i| boxes[i]).collect();
        prop_assert_eq!(nms_indices(&survivors, t).unwrap(), (0..survivors.len()).collect::<Vec<_>>());
    }

    #[test]
    fn deltas_round_trip(a in bbox(), b in bbox()) {
        prop_assume!(b.width() / a.width() < 60.0 && b.height() / a.height() < 60.0);
        let back = decode_deltas(&a, encode_deltas(&a, &b).unwrap(), None).unwrap();
        for (x, y) in back.coords().iter().zip(b.coords()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn ap_matches_brute_force_and_ignores_score_scale(seed in any::<u64>(), k in 0.1..10.0f64, c in -5.0..5.0f64) {
        let (records, num_gt) = random_match_records(&mut SeededRng::new(seed));
        let ap = average_precision(&records, num_gt).unwrap();
        prop_assert!((ap - ap_brute_force(&records, num_gt)).abs() <= 1e-9);
        prop_assert!((0.0..=100.0).contains(&ap));
        prop_assert!(ap <= recall(&records, num_gt).unwrap() + 1e-9);
        let rescaled: Vec<MatchRecord> = records.iter().map(|r| MatchRecord { score: k * r.score + c, ..*r }).collect();
        prop_assert!((average_precision(&rescaled, num_gt).unwrap() - ap).abs() <= 1e-9);
    }

    #[test]
    fn matching_is_one_to_one_and_above_threshold(seed in any::<u64>(), t in 0.1..0.9f64) {
        let mut rng = SeededRng::new(seed);
        let (w, h) = (48, 48);
        let gt: Vec<Annotation> = support_boxes(&mut rng, 6)
            .into_iter()
            .filter_map(|b| Annotation::from_mask(1, InstanceMask::from_box(w, h, &b)))
            .collect();
        let mut dets: Vec<Detection> = support_boxes(&mut rng, 10)
            .into_iter()
            .map(|b| {
                let score = rng.uniform(0.0, 1.0);
                Detection { bbox: b.scored(score), score, mask_probs: vec![], mask_extent: 0, mask: InstanceMask::from_box(w, h, &b) }
            })
            .collect();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        for mode in [MatchMode::Box, MatchMode::Mask] {
            let records = match_predictions(&dets, &gt, t, mode).unwrap();
            let mut seen = vec![false; gt.len()];
            for r in &records {
                if let Some(g) = r.gt {
                    prop_assert!(!seen[g]);
                    seen[g] = true;
                    prop_assert!(r.iou >= t);
                }
            }
        }
    }

    #[test]
    fn slc_block_matches_oracle(seed in any::<u64>()) {
        let (module, input) = random_slc_case(&mut SeededRng::new(seed));
        let diff = max_abs_diff(&slc_forward(&input, &module).unwrap(), &slc_chained_oracle(&input, &module));
        prop_assert!(diff <= 1e-10);
    }

    #[test]
    fn bias_free_block_is_positively_homogeneous(seed in any::<u64>(), alpha in 0.1..5.0f64) {
        let (mut module, input) = random_slc_case(&mut SeededRng::new(seed));
        for spec in module.convs_mut() {
            spec.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
        let scaled = Tensor::from_fn(input.shape().to_vec(), |i| alpha * input.data()[i]);
        let a = slc_forward(&scaled, &module).unwrap();
        let b = slc_forward(&input, &module).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - alpha * y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn dilated_conv_equals_zero_stuffed_kernel(seed in any::<u64>(), rate in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let mut dilated = ConvBlockSpec::same(2, 2, 3, rate).unwrap();
        dilated.weight = random_tensor(&mut rng, &[2, 2, 3, 3], 1.0);
        dilated.bias = random_tensor(&mut rng, &[2], 1.0);
        let k = 2 * rate + 1;
        let mut dense = ConvBlockSpec::same(2, 2, k, 1).unwrap();
        dense.bias = dilated.bias.clone();
        for o in 0..2 {
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let v = dilated.weight.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                        dense.weight.data_mut()[((o * 2 + c) * k + ky * rate) * k + kx * rate] = v;
                    }
                }
            }
        }
        let x = random_tensor(&mut rng, &[1, 2, 9, 11], 1.0);
        let a = conv2d(&x, &dilated).unwrap();
        prop_assert!(max_abs_diff(&a, &conv2d(&x, &dense).unwrap()) <= 1e-12);
        prop_assert!(max_abs_diff(&a, &direct_conv(&x, &dilated)) <= 1e-12);
    }

    #[test]
    fn roi_align_commutes_with_integer_shifts(seed in any::<u64>(), dx in 0usize..4, dy in 0usize..4) {
        let mut rng = SeededRng::new(seed);
        let (c, h, w) = (2, 8, 9);
        let f = random_tensor(&mut rng, &[1, c, h, w], 1.0);
        let shifted = Tensor::from_fn([1, c, h + dy, w + dx], |i| {
            let (ch, y, x) = (i / ((h + dy) * (w + dx)), (i / (w + dx)) % (h + dy), i % (w + dx));
            if y < dy || x < dx { 0.0 } else { f.data()[(ch * h + y - dy) * w + x - dx] }
        });
        // samples sit half a pixel inside the box, so starting at 0.5 keeps
        // them off the zero padding of the shifted map
        let x1 = rng.uniform(0.5, 4.0);
        let y1 = rng.uniform(0.5, 4.0);
        let roi = [x1, y1, x1 + rng.uniform(1.5, 4.5), y1 + rng.uniform(1.5, 3.5)];
        let moved = [roi[0] + dx as f64, roi[1] + dy as f64, roi[2] + dx as f64, roi[3] + dy as f64];
        let pool = |t: &Tensor, r: [f64; 4]| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let o = g.roi_align(v, &[r], 1.0, 3, 2).unwrap();
            g.into_value(o)
        };
        prop_assert!(max_abs_diff(&pool(&f, roi), &pool(&shifted, moved)) <= 1e-12);
    }

    #[test]
    fn mask_dilation_grows_and_touching_is_symmetric(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let (w, h) = (12, 10);
        let random_mask = |rng: &mut SeededRng| InstanceMask::from_bits(w, h, (0..w * h).map(|_| rng.chance(0.1)).collect()).unwrap();
        let (a, b) = (random_mask(&mut rng), random_mask(&mut rng));
        let d = a.dilate();
        prop_assert_eq!(d.intersection_count(&a), a.count());
        prop_assert!(d.count() >= a.count());
        prop_assert_eq!(a.touches(&b), b.touches(&a));
    }

    #[test]
    fn tiles_are_in_bounds_and_sparse(seed in any::<u64>(), n in 1usize..40, size in 16usize..128) {
        let mut rng = SeededRng::new(seed);
        let (w, h) = (200, 150);
        let centers: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(0.0, w as f64), rng.uniform(0.0, h as f64))).collect();
        let spec = TileSpec { tile_size: size, dedup_iou: 0.1, image_extent: (w, h) };
        let tiles = tile_image(&centers, &spec).unwrap();
        prop_assert!(!tiles.is_empty());
        for (i, t) in tiles.iter().enumerate() {
            let b = t.bbox;
            prop_assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w as f64 && b.y2 <= h as f64);
            prop_assert!(b.contains_point(centers[t.center_index].0, centers[t.center_index].1));
            for u in &tiles[i + 1..] {
                prop_assert!(iou(&b, &u.bbox) <= 0.1);
            }
        }
    }
}

/// Integer-aligned boxes inside a 48x48 canvas.
fn support_boxes(rng: &mut SeededRng, n: usize) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let (x, y) = (rng.int_inclusive(0, 36) as f64, rng.int_inclusive(0, 36) as f64);
            BBox::new(x, y, x + rng.int_inclusive(2, 11) as f64, y + rng.int_inclusive(2, 11) as f64)
        })
        .collect()
}
