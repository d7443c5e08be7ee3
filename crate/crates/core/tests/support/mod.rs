//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance harness. Everything here is written
//! the slow, obvious way so that it can serve as an oracle for the library.
#![allow(dead_code)]

use slcmask_core::autograd::{ConvBlockSpec, ConvGeom, ConvVars, Graph, Var};
use slcmask_core::geometry::{iou, BBox};
use slcmask_core::metrics::MatchRecord;
use slcmask_core::pipeline::{Model, PipelineConfig};
use slcmask_core::rng::SeededRng;
use slcmask_core::slc::{FusedLayers, SlcConfig, SlcModule, SlcVars};
use slcmask_core::{Result, Tensor};

// ---------------------------------------------------------------------------
// Convolution and the context block
// ---------------------------------------------------------------------------

/// Direct convolution by six nested loops over `[N, C, H, W]`.
pub fn direct_conv(input: &Tensor, spec: &ConvBlockSpec) -> Tensor {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (k, d, p, st) = (spec.kernel_size, spec.dilation, spec.padding as isize, spec.stride);
    let ho = (h + 2 * spec.padding - d * (k - 1) - 1) / st + 1;
    let wo = (w + 2 * spec.padding - d * (k - 1) - 1) / st + 1;
    let x = input.data();
    let wt = spec.weight.data();
    let mut out = vec![0.0; n * spec.out_channels * ho * wo];
    for b in 0..n {
        for o in 0..spec.out_channels {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = spec.bias.data()[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * st + ky * d) as isize - p;
                                let ix = (xo * st + kx * d) as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += wt[((o * c + ci) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    out[((b * spec.out_channels + o) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    Tensor::new([n, spec.out_channels, ho, wo], out).unwrap()
}

pub fn relu_tensor(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

fn add_tensors(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap()
}

/// Pre-activation output of layer `i` applied to `feed`.
fn layer_output(module: &SlcModule, i: usize, feed: &Tensor) -> Tensor {
    let l = &module.layers[i];
    let a = relu_tensor(&direct_conv(feed, &l.pointwise));
    direct_conv(&a, &l.dilated)
}

/// The block composed sequentially: layer `i + 1` consumes the activated
/// output of layer `i`; the selected pre-activation outputs are summed.
pub fn slc_chained_oracle(input: &Tensor, module: &SlcModule) -> Tensor {
    let mut feed = input.clone();
    let mut total: Option<Tensor> = None;
    for i in 0..3 {
        let o = layer_output(module, i, &feed);
        if module.config.fused_layers.contains(i + 1) {
            total = Some(match total {
                Some(t) => add_tensors(&t, &o),
                None => o.clone(),
            });
        }
        feed = relu_tensor(&o);
    }
    total.unwrap()
}

/// The same layers applied as independent branches on the raw input; the
/// block must *not* behave like this.
pub fn slc_parallel_oracle(input: &Tensor, module: &SlcModule) -> Tensor {
    let mut total: Option<Tensor> = None;
    for i in module.config.fused_layers.layers() {
        let o = layer_output(module, i - 1, input);
        total = Some(match total {
            Some(t) => add_tensors(&t, &o),
            None => o,
        });
    }
    total.unwrap()
}

pub fn random_tensor(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| scale * rng.normal())
}

fn random_fused(rng: &mut SeededRng) -> FusedLayers {
    let mut layers = vec![1];
    for l in 2..=3 {
        if rng.chance(0.5) {
            layers.push(l);
        }
    }
    FusedLayers::from_layers(&layers).unwrap()
}

/// A randomly shaped, randomly weighted block and input.
pub fn random_slc_case(rng: &mut SeededRng) -> (SlcModule, Tensor) {
    let config = SlcConfig {
        r1: rng.int_inclusive(1, 4),
        r2: rng.int_inclusive(1, 5),
        channels: rng.int_inclusive(1, 4),
        fused_layers: random_fused(rng),
        ..SlcConfig::default()
    };
    let mut module = SlcModule::new(config).unwrap();
    for spec in module.convs_mut() {
        let w = random_tensor(rng, spec.weight.shape(), 0.5);
        spec.weight = w;
        let b = random_tensor(rng, spec.bias.shape(), 0.1);
        spec.bias = b;
    }
    let shape = [rng.int_inclusive(1, 2), config.channels, rng.int_inclusive(4, 12), rng.int_inclusive(4, 12)];
    let input = random_tensor(rng, &shape, 1.0);
    (module, input)
}

/// One channel, every weight 1, a single unit impulse at the centre of a
/// 15x15 canvas, rates (2, 3). Chained, the block sees 13 pixels across, so
/// the pixel 6 columns right of the impulse is lit; as parallel branches
/// the widest support is 7 pixels and that pixel stays dark. Returns the
/// module, the input and the probed pixel `(y, x)`.
pub fn chaining_fixture() -> (SlcModule, Tensor, (usize, usize)) {
    let config = SlcConfig { r1: 2, r2: 3, channels: 1, fused_layers: FusedLayers::ALL, ..SlcConfig::default() };
    let mut module = SlcModule::new(config).unwrap();
    module.fill_weights(1.0);
    let n = 15;
    let input = Tensor::from_fn([1, 1, n, n], |i| if i == (n / 2) * n + n / 2 { 1.0 } else { 0.0 });
    (module, input, (n / 2, n / 2 + 6))
}

pub fn pixel(t: &Tensor, y: usize, x: usize) -> f64 {
    let w = t.shape()[3];
    t.data()[y * w + x]
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Geometry and metrics
// ---------------------------------------------------------------------------

/// Boxes clustered so that overlaps are common, with coarse scores so that
/// ties occur.
pub fn random_scored_boxes(rng: &mut SeededRng, n: usize) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let (x, y) = (rng.uniform(0.0, 40.0), rng.uniform(0.0, 40.0));
            let (w, h) = (rng.uniform(1.0, 25.0), rng.uniform(1.0, 25.0));
            let score = (rng.uniform(0.0, 1.0) * 20.0).floor() / 20.0;
            BBox::new(x, y, x + w, y + h).scored(score)
        })
        .collect()
}

/// Greedy NMS by repeated arg-max: take the highest-scoring live box
/// (lowest index on ties), keep it, and kill every live box overlapping it
/// by more than `threshold`.
pub fn nms_reference(boxes: &[BBox], threshold: f64) -> Vec<usize> {
    let mut alive = vec![true; boxes.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.is_none_or(|b| boxes[i].score.unwrap() > boxes[b].score.unwrap()) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..boxes.len() {
            if alive[i] && iou(&boxes[b], &boxes[i]) > threshold {
                alive[i] = false;
            }
        }
    }
    kept
}

/// Random match records with distinct scores; true positives reference
/// distinct ground truths, and `num_gt` is at least the number of them.
pub fn random_match_records(rng: &mut SeededRng) -> (Vec<MatchRecord>, usize) {
    let n = rng.int_inclusive(0, 30);
    let mut next_gt = 0;
    let mut records: Vec<MatchRecord> = (0..n)
        .map(|i| {
            let score = rng.uniform(0.0, 1.0) + i as f64 * 1e-9;
            let gt = rng.chance(0.6).then(|| {
                next_gt += 1;
                next_gt - 1
            });
            MatchRecord { score, gt, iou: if gt.is_some() { 0.7 } else { 0.0 } }
        })
        .collect();
    rng.shuffle(&mut records);
    let num_gt = next_gt + rng.int_inclusive(if next_gt == 0 { 1 } else { 0 }, 5);
    (records, num_gt)
}

/// Average precision by brute force: for every cut-off `k` of the ranked
/// list compute recall `r_k` and precision `p_k`; the interpolated precision
/// at `r` is the best precision over all cut-offs reaching recall `>= r`;
/// integrate it over the recall steps. Percent.
pub fn ap_brute_force(records: &[MatchRecord], num_gt: usize) -> f64 {
    let mut ranked = records.to_vec();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let points: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = ranked[..k].iter().filter(|m| m.gt.is_some()).count() as f64;
            (tp / num_gt as f64, tp / k as f64)
        })
        .collect();
    let interp = |r: f64| points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(r, _) in &points {
        if r > prev {
            ap += (r - prev) * interp(r);
            prev = r;
        }
    }
    100.0 * ap
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks
// ---------------------------------------------------------------------------

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// An op under test, with the inputs it is differentiated with respect to.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub op: OpFn,
}

/// Reduces an op output to a scalar with a non-uniform upstream gradient.
fn scalar_loss(g: &mut Graph, y: Var) -> Result<Var> {
    if g.value(y).numel() == 1 {
        return g.sum(y);
    }
    let s = g.sigmoid(y)?;
    g.sum(s)
}

fn eval_loss(case: &GradCase, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = (case.op)(&mut g, &vars).unwrap();
    let l = scalar_loss(&mut g, y).unwrap();
    g.value(l).item().unwrap()
}

/// Largest relative error between the recorded gradient and central
/// differences, over every element of every input.
pub fn max_relative_error(case: &GradCase) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t)).collect();
    let y = (case.op)(&mut g, &vars).unwrap();
    let l = scalar_loss(&mut g, y).unwrap();
    g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; case.inputs[i].numel()]);
        for j in 0..case.inputs[i].numel() {
            let mut probe = case.inputs.clone();
            probe[i].data_mut()[j] += FD_STEP;
            let up = eval_loss(case, &probe);
            probe[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval_loss(case, &probe);
            worst = worst.max(relative_error(analytic[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn conv_case(name: &'static str, rng: &mut SeededRng, input: [usize; 4], out: usize, k: usize, geom: ConvGeom, bias: bool) -> GradCase {
    let mut inputs = vec![random_tensor(rng, &input, 1.0), random_tensor(rng, &[out, input[1], k, k], 0.5)];
    if bias {
        inputs.push(random_tensor(rng, &[out], 0.5));
    }
    GradCase {
        name,
        inputs,
        op: Box::new(move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), geom)),
    }
}

/// One case per differentiable op (several geometries for convolution)
/// plus the context block with respect to its input and all its weights.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = SeededRng::derived(seed, "grad-cases");
    let rng = &mut rng;
    let geom = |stride, padding, dilation| ConvGeom { stride, padding, dilation };
    let mut cases = vec![
        conv_case("conv2d 3x3", rng, [2, 3, 6, 7], 4, 3, geom(1, 1, 1), true),
        conv_case("conv2d 3x3 dilation 3", rng, [1, 2, 9, 8], 3, 3, geom(1, 3, 3), true),
        conv_case("conv2d 3x3 stride 2 dilation 2", rng, [1, 3, 9, 10], 2, 3, geom(2, 2, 2), false),
        conv_case("conv2d 1x1", rng, [2, 4, 3, 5], 3, 1, geom(1, 0, 1), true),
        conv_case("conv2d 5x5 valid", rng, [1, 2, 7, 7], 2, 5, geom(1, 0, 1), true),
    ];
    let shape = [2, 3, 4, 5];
    cases.push(GradCase {
        name: "add",
        inputs: vec![random_tensor(rng, &shape, 1.0), random_tensor(rng, &shape, 1.0)],
        op: Box::new(|g, v| g.add(v[0], v[1])),
    });
    cases.push(GradCase {
        name: "add_all",
        inputs: (0..3).map(|_| random_tensor(rng, &shape, 1.0)).collect(),
        op: Box::new(|g, v| g.add_all(v)),
    });
    cases.push(GradCase {
        name: "scale",
        inputs: vec![random_tensor(rng, &shape, 1.0)],
        op: Box::new(|g, v| g.scale(v[0], -1.7)),
    });
    cases.push(GradCase {
        name: "relu",
        inputs: vec![random_tensor(rng, &shape, 1.0)],
        op: Box::new(|g, v| g.relu(v[0])),
    });
    cases.push(GradCase {
        name: "sigmoid",
        inputs: vec![random_tensor(rng, &shape, 2.0)],
        op: Box::new(|g, v| g.sigmoid(v[0])),
    });
    cases.push(GradCase {
        name: "sum",
        inputs: vec![random_tensor(rng, &shape, 1.0)],
        op: Box::new(|g, v| {
            let s = g.sigmoid(v[0])?;
            g.sum(s)
        }),
    });
    let target = Tensor::from_fn(shape, |_| if rng.chance(0.5) { 1.0 } else { 0.0 });
    cases.push(GradCase {
        name: "bce_loss",
        inputs: vec![random_tensor(rng, &shape, 1.0)],
        op: Box::new(move |g, v| {
            let p = g.sigmoid(v[0])?;
            g.bce_loss(p, &target)
        }),
    });
    // differences on both sides of the unit transition
    let target = random_tensor(rng, &shape, 1.5);
    cases.push(GradCase {
        name: "smooth_l1_loss",
        inputs: vec![random_tensor(rng, &shape, 1.5)],
        op: Box::new(move |g, v| g.smooth_l1_loss(v[0], &target)),
    });
    for factor in [2, 3] {
        cases.push(GradCase {
            name: if factor == 2 { "upsample x2" } else { "upsample x3" },
            inputs: vec![random_tensor(rng, &[1, 2, 3, 4], 1.0)],
            op: Box::new(move |g, v| g.upsample(v[0], factor)),
        });
    }
    let rois = vec![[0.5, 1.25, 9.75, 7.5], [3.0, 0.0, 12.0, 12.0], [-2.0, 4.3, 5.1, 15.0]];
    cases.push(GradCase {
        name: "roi_align",
        inputs: vec![random_tensor(rng, &[1, 3, 6, 7], 1.0)],
        op: Box::new(move |g, v| g.roi_align(v[0], &rois, 0.5, 3, 2)),
    });
    cases.push(GradCase {
        name: "pixel_shuffle",
        inputs: vec![random_tensor(rng, &[1, 8, 3, 2], 1.0)],
        op: Box::new(|g, v| g.pixel_shuffle(v[0], 2)),
    });
    cases.push(GradCase {
        name: "gather",
        inputs: vec![random_tensor(rng, &[2, 3, 2, 2], 1.0)],
        op: Box::new(|g, v| g.gather(v[0], &[0, 5, 5, 23, 11, 0])),
    });
    cases.push(GradCase {
        name: "concat",
        inputs: vec![random_tensor(rng, &[2, 3], 1.0), random_tensor(rng, &[4], 1.0), random_tensor(rng, &[1, 1, 2, 2], 1.0)],
        op: Box::new(|g, v| g.concat(v)),
    });
    cases.push(slc_case(rng));
    cases
}

/// The context block as a function of its input and its twelve weight and
/// bias tensors.
fn slc_case(rng: &mut SeededRng) -> GradCase {
    let config = SlcConfig { r1: 2, r2: 3, channels: 2, ..SlcConfig::default() };
    let module = SlcModule::new(config).unwrap();
    let mut inputs = vec![random_tensor(rng, &[1, 2, 8, 9], 1.0)];
    for spec in module.convs() {
        inputs.push(random_tensor(rng, spec.weight.shape(), 0.5));
        inputs.push(random_tensor(rng, spec.bias.shape(), 0.2));
    }
    GradCase {
        name: "slc block",
        inputs,
        op: Box::new(move |g, v| {
            let conv = |i: usize| ConvVars { weight: v[1 + 2 * i], bias: v[2 + 2 * i] };
            let vars = SlcVars { pointwise: [conv(0), conv(2), conv(4)], dilated: [conv(1), conv(3), conv(5)] };
            module.forward_graph(g, v[0], &vars)
        }),
    }
}

/// A small model whose mask head carries the context block.
pub fn mask_head_model(seed: u64) -> Model {
    let mut cfg = PipelineConfig::desk();
    cfg.slc.enabled = true;
    cfg.roi.mask_channels = 4;
    cfg.slc.channels = 4;
    cfg.roi.mask_convs = 2;
    cfg.roi.mask_roi_extent = 7;
    cfg.roi.mask_extent = 14;
    Model::new(&cfg, seed).unwrap()
}

/// Finite-difference check of the full mask head (RoI pooling, conv stack,
/// context block, deconvolution, logits, mask loss). Checks the gradient
/// with respect to `samples` random entries of the feature map and of every
/// mask-head parameter tensor. Returns the largest relative error and the
/// number of entries checked.
pub fn mask_head_check(seed: u64, samples: usize) -> (f64, usize) {
    let mut rng = SeededRng::derived(seed, "mask-head-check");
    let mut model = mask_head_model(seed);
    // Zero biases make exact zeros (ReLU kinks) common wherever every input
    // channel is dead; random biases keep pre-activations off the kink.
    for t in model.params_mut() {
        if t.rank() == 1 {
            let b = random_tensor(&mut rng, t.shape(), 0.1);
            t.data_mut().copy_from_slice(b.data());
        }
    }
    let channels = model.config.backbone.fpn_channels;
    let feature = random_tensor(&mut rng, &[1, channels, 8, 8], 1.0);
    let rois = vec![[2.0, 3.5, 21.0, 17.0], [10.25, 0.5, 30.0, 29.0]];
    let m = model.config.roi.mask_extent;
    let target = Tensor::from_fn([rois.len(), 1, m, m], |_| if rng.chance(0.4) { 1.0 } else { 0.0 });

    let loss = |model: &Model, feature: &Tensor, trainable: bool| -> (Graph, Var, Option<Var>, slcmask_core::pipeline::ModelVars) {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, trainable);
        let f = if trainable { g.param(feature) } else { g.constant(feature.clone()) };
        let logits = model.mask_head(&mut g, &vars, f, &rois).unwrap();
        let p = g.sigmoid(logits).unwrap();
        let l = g.bce_loss(p, &target).unwrap();
        (g, l, Some(f), vars)
    };
    let value = |model: &Model, feature: &Tensor| -> f64 {
        let (g, l, _, _) = loss(model, feature, false);
        g.value(l).item().unwrap()
    };

    let (mut g, l, f, vars) = loss(&model, &feature, true);
    g.backward(l).unwrap();
    let feature_grad = g.grad(f.unwrap()).unwrap().to_vec();
    let mut analytic_model = model.clone();
    analytic_model.load_grads(&g, &vars).unwrap();
    let param_grads: Vec<(String, Vec<f64>)> =
        analytic_model.named_params().into_iter().map(|(n, t)| (n, t.grad().unwrap().to_vec())).collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe_feature = feature.clone();
    for _ in 0..samples {
        let j = rng.below(feature.numel());
        let orig = probe_feature.data()[j];
        probe_feature.data_mut()[j] = orig + FD_STEP;
        let up = value(&model, &probe_feature);
        probe_feature.data_mut()[j] = orig - FD_STEP;
        let down = value(&model, &probe_feature);
        probe_feature.data_mut()[j] = orig;
        worst = worst.max(relative_error(feature_grad[j], (up - down) / (2.0 * FD_STEP)));
        checked += 1;
    }
    for (pi, (name, grad)) in param_grads.iter().enumerate() {
        if !name.starts_with("mask") {
            continue;
        }
        for _ in 0..samples.min(grad.len()) {
            let j = rng.below(grad.len());
            let orig = model.params_mut()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + FD_STEP;
            let up = value(&model, &feature);
            model.params_mut()[pi].data_mut()[j] = orig - FD_STEP;
            let down = value(&model, &feature);
            model.params_mut()[pi].data_mut()[j] = orig;
            worst = worst.max(relative_error(grad[j], (up - down) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    (worst, checked)
}
