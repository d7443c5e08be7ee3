//! The library against slow, independent reference implementations.

mod support;

use slcmask_core::geometry::{decode_deltas, encode_deltas, nms_indices, BBox};
use slcmask_core::metrics::average_precision;
use slcmask_core::rng::SeededRng;
use slcmask_core::slc::{
    closed_form_receptive_fields, impulse_probe, measure_receptive_field, probe_field, slc_forward, slc_layer_receptive_fields,
    FusedLayers, SlcConfig,
};
use support::*;

#[test]
fn receptive_field_fold_equals_closed_forms() {
    for r1 in 1..=6 {
        for r2 in 1..=6 {
            let fold = slc_layer_receptive_fields(r1, r2).unwrap();
            assert_eq!(fold, [3, 5 + 2 * (r1 - 1), 3 + 2 * (r1 + r2)], "({r1}, {r2})");
            assert_eq!(fold, closed_form_receptive_fields(r1, r2));
        }
    }
}

#[test]
fn measured_impulse_support_equals_analytic() {
    for r1 in 1..=3 {
        for r2 in 1..=3 {
            let analytic = slc_layer_receptive_fields(r1, r2).unwrap();
            for layer in 1..=3 {
                let upto: Vec<usize> = (1..=layer).collect();
                let cfg = SlcConfig { r1, r2, channels: 1, fused_layers: FusedLayers::from_layers(&upto).unwrap(), ..SlcConfig::default() };
                let measured = measure_receptive_field(&impulse_probe(&cfg).unwrap(), probe_field(&cfg)).unwrap();
                assert_eq!(measured, analytic[layer - 1], "({r1}, {r2}) layer {layer}");
            }
        }
    }
}

#[test]
fn direct_conv_agrees_with_hand_computed_values() {
    let mut spec = slcmask_core::autograd::ConvBlockSpec::same(1, 1, 3, 2).unwrap();
    spec.weight = slcmask_core::Tensor::from_fn([1, 1, 3, 3], |i| i as f64);
    let x = slcmask_core::Tensor::from_fn([1, 1, 5, 5], |i| if i == 12 { 1.0 } else { 0.0 });
    let y = direct_conv(&x, &spec);
    // output (y, x) picks weight (ky, kx) with y + 2 ky - 2 = 2, so the
    // impulse lands flipped at stride-2 offsets around the centre
    assert_eq!(pixel(&y, 2, 2), 4.0);
    assert_eq!(pixel(&y, 0, 0), 8.0);
    assert_eq!(pixel(&y, 4, 4), 0.0);
    assert_eq!(pixel(&y, 0, 4), 6.0);
    assert_eq!(pixel(&y, 1, 1), 0.0);
}

#[test]
fn slc_forward_matches_sequential_oracle_on_random_configs() {
    let mut rng = SeededRng::derived(11, "slc-oracle");
    for case in 0..50 {
        let (module, input) = random_slc_case(&mut rng);
        let got = slc_forward(&input, &module).unwrap();
        let want = slc_chained_oracle(&input, &module);
        let diff = max_abs_diff(&got, &want);
        assert!(diff <= 1e-10, "case {case} {:?}: {diff:e}", module.config);
    }
}

#[test]
fn layers_are_chained_not_parallel() {
    let (module, input, (y, x)) = chaining_fixture();
    let got = slc_forward(&input, &module).unwrap();
    let chained = slc_chained_oracle(&input, &module);
    let parallel = slc_parallel_oracle(&input, &module);
    assert!(max_abs_diff(&got, &chained) <= 1e-10);
    assert_eq!(pixel(&parallel, y, x), 0.0);
    assert!(pixel(&got, y, x) > 0.5);
}

#[test]
fn nms_matches_reference() {
    let mut rng = SeededRng::derived(5, "nms-oracle");
    for case in 0..1000 {
        let n = rng.int_inclusive(0, 40);
        let boxes = random_scored_boxes(&mut rng, n);
        let t = [0.0, 0.1, 0.3, 0.5, 0.7, 1.0][case % 6];
        assert_eq!(nms_indices(&boxes, t).unwrap(), nms_reference(&boxes, t), "case {case}");
    }
}

#[test]
fn average_precision_matches_brute_force() {
    let mut rng = SeededRng::derived(6, "ap-oracle");
    for case in 0..500 {
        let (records, num_gt) = random_match_records(&mut rng);
        let got = average_precision(&records, num_gt).unwrap();
        let want = ap_brute_force(&records, num_gt);
        assert!((got - want).abs() <= 1e-9, "case {case}: {got} vs {want}");
    }
}

/// Scale changes stay below the decode cap (`MAX_LOG_SCALE`, a factor of
/// 62.5), inside which decoding inverts encoding.
#[test]
fn delta_round_trip() {
    let mut rng = SeededRng::derived(7, "deltas");
    for _ in 0..1000 {
        let rand_box = |rng: &mut SeededRng| {
            let (x, y) = (rng.uniform(-50.0, 500.0), rng.uniform(-50.0, 500.0));
            BBox::new(x, y, x + rng.uniform(4.0, 240.0), y + rng.uniform(4.0, 240.0))
        };
        let (anchor, gt) = (rand_box(&mut rng), rand_box(&mut rng));
        let back = decode_deltas(&anchor, encode_deltas(&anchor, &gt).unwrap(), None).unwrap();
        for (a, b) in back.coords().iter().zip(gt.coords()) {
            assert!((a - b).abs() <= 1e-9, "{back:?} vs {gt:?}");
        }
    }
}
