//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are inserted with
//! [`Graph::leaf`] (or [`Graph::param`] for trainable tensors), every op
//! appends one node, and [`Graph::backward`] walks the nodes in reverse,
//! accumulating into the gradient slot of each leaf that requires it. Calling
//! `backward` twice without resetting accumulates twice. Dropping the graph
//! frees it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, RoiGeom};
use crate::tensor::Tensor;

pub use crate::kernels::ConvGeom;

/// Clamp applied to probabilities before taking logarithms in [`Graph::bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        dims: ConvDims,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Bce { pred: Var, target: Vec<f64> },
    SmoothL1 { pred: Var, target: Vec<f64> },
    Upsample { input: Var, planes: usize, h: usize, w: usize, factor: usize },
    RoiAlign { feature: Var, rois: Vec<[f64; 4]>, geo: RoiGeom },
    Gather { input: Var, indices: Vec<usize> },
    PixelShuffle { input: Var, src: Vec<usize> },
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// One convolution layer: geometry plus its weight `[out, in, k, k]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub padding: usize,
    pub stride: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvBlockSpec {
    /// Zero-initialised block. The kernel must be odd and the dilation at least 1.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("conv block", "channel counts must be positive"));
        }
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(Error::invalid(
                "conv block",
                format!("kernel size must be odd, got {kernel_size}"),
            ));
        }
        if dilation == 0 {
            return Err(Error::invalid("conv block", "dilation rate must be >= 1"));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            padding,
            stride: 1,
            weight: Tensor::zeros([out_channels, in_channels, kernel_size, kernel_size]),
            bias: Tensor::zeros([out_channels]),
        })
    }

    /// Block with "same" padding `dilation * (k - 1) / 2`.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Result<Self> {
        let padding = dilation * kernel_size.saturating_sub(1) / 2;
        Self::new(in_channels, out_channels, kernel_size, dilation, padding)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom {
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
        }
    }

    /// Extent of the kernel footprint on the input, `r (k - 1) + 1`.
    pub fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Graph handles for a bound [`ConvBlockSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, needs_grad: bool) -> Result<Var> {
        check_finite(op, value.data())?;
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Inserts a leaf; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.detached())
    }

    /// A trainable leaf holding a copy of `t`'s value with an empty gradient slot.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.detached().with_requires_grad(true))
    }

    pub fn bind_conv(&mut self, spec: &ConvBlockSpec) -> ConvVars {
        ConvVars {
            weight: self.param(&spec.weight),
            bias: self.param(&spec.bias),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf (None until a backward pass reaches it).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn into_value(mut self, v: Var) -> Tensor {
        self.nodes.swap_remove(v.0).value
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let ws = self.value(weight).shape().to_vec();
        let [o, wc, k, k2] = ws[..] else {
            return Err(Error::ShapeMismatch { op: OP, axis: "weight rank", expected: 4, found: ws.len() });
        };
        if wc != c {
            return Err(Error::ShapeMismatch { op: OP, axis: "channels", expected: wc, found: c });
        }
        if k != k2 {
            return Err(Error::ShapeMismatch { op: OP, axis: "kernel width", expected: k, found: k2 });
        }
        if let Some(b) = bias {
            let bn = self.value(b).numel();
            if bn != o {
                return Err(Error::ShapeMismatch { op: OP, axis: "bias", expected: o, found: bn });
            }
        }
        if geom.stride == 0 || geom.dilation == 0 {
            return Err(Error::invalid(OP, "stride and dilation must be >= 1"));
        }
        let effective = geom.dilation * (k - 1) + 1;
        let ho = geom.out_extent(h, k).ok_or(Error::ShapeMismatch {
            op: OP,
            axis: "height",
            expected: effective,
            found: h + 2 * geom.padding,
        })?;
        let wo = geom.out_extent(w, k).ok_or(Error::ShapeMismatch {
            op: OP,
            axis: "width",
            expected: effective,
            found: w + 2 * geom.padding,
        })?;
        let dims = ConvDims { n, c, h, w, o, k, ho, wo };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            dims,
            geom,
        );
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        self.push(
            OP,
            Tensor::new([n, o, ho, wo], out)?,
            Op::Conv2d { input, weight, bias, dims, geom },
            needs,
        )
    }

    /// Applies a bound conv block.
    pub fn conv_block(&mut self, input: Var, spec: &ConvBlockSpec, vars: ConvVars) -> Result<Var> {
        let c = self.value(input).shape().get(1).copied().unwrap_or(0);
        if c != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: "channels",
                expected: spec.in_channels,
                found: c,
            });
        }
        self.conv2d(input, vars.weight, Some(vars.bias), spec.geom())
    }

    /// `c[i] = a[i] + b[i]`, shapes must match exactly.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            let axis = ta
                .shape()
                .iter()
                .zip(tb.shape())
                .position(|(x, y)| x != y)
                .unwrap_or(0);
            return Err(Error::ShapeMismatch {
                op: "elementwise_add",
                axis: "extent",
                expected: ta.shape().get(axis).copied().unwrap_or(ta.rank()),
                found: tb.shape().get(axis).copied().unwrap_or(tb.rank()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("elementwise_add", t, Op::Add(a, b), needs)
    }

    /// Left-to-right sum of one or more same-shape tensors.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("elementwise_add", "no operands"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push("scale", t, Op::Scale(a, factor), needs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push("relu", t, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| stable_sigmoid(x)).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push("sigmoid", t, Op::Sigmoid(a), needs)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`,
    /// with probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        const OP: &str = "bce_loss";
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch { op: OP, axis: "numel", expected: p.numel(), found: target.numel() });
        }
        if p.numel() == 0 {
            return Err(Error::invalid(OP, "empty input"));
        }
        if p.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(OP, "predictions must lie in [0, 1]"));
        }
        if target.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(OP, "targets must lie in [0, 1]"));
        }
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&pv, &t)| {
                let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * libm::log(pc) + (1.0 - t) * libm::log(1.0 - pc))
            })
            .sum();
        let needs = self.needs(pred);
        self.push(
            OP,
            Tensor::scalar(total / n),
            Op::Bce { pred, target: target.data().to_vec() },
            needs,
        )
    }

    /// Mean smooth-L1 (Huber with unit transition) between `pred` and `target`.
    pub fn smooth_l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        const OP: &str = "smooth_l1_loss";
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch { op: OP, axis: "numel", expected: p.numel(), found: target.numel() });
        }
        if p.numel() == 0 {
            return Err(Error::invalid(OP, "empty input"));
        }
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| {
                let d = a - b;
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            })
            .sum();
        let needs = self.needs(pred);
        self.push(
            OP,
            Tensor::scalar(total / n),
            Op::SmoothL1 { pred, target: target.data().to_vec() },
            needs,
        )
    }

    /// Nearest-neighbour upsampling of the two trailing axes by `factor`.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("upsample")?;
        if factor == 0 {
            return Err(Error::invalid("upsample", "factor must be >= 1"));
        }
        let out = kernels::upsample_forward(self.value(input).data(), n * c, h, w, factor);
        let t = Tensor::new([n, c, h * factor, w * factor], out)?;
        let needs = self.needs(input);
        self.push(
            "upsample",
            t,
            Op::Upsample { input, planes: n * c, h, w, factor },
            needs,
        )
    }

    /// Pools each RoI (image coordinates `[x1, y1, x2, y2]`) from a single-image
    /// feature map `[1, C, H, W]` into `[R, C, out, out]`. Every output cell
    /// averages `sampling^2` bilinear samples; no coordinate is rounded.
    pub fn roi_align(
        &mut self,
        feature: Var,
        rois: &[[f64; 4]],
        spatial_scale: f64,
        out: usize,
        sampling: usize,
    ) -> Result<Var> {
        const OP: &str = "roi_align";
        let [n, c, h, w] = self.value(feature).dims4(OP)?;
        if n != 1 {
            return Err(Error::ShapeMismatch { op: OP, axis: "batch", expected: 1, found: n });
        }
        if out == 0 || sampling == 0 {
            return Err(Error::invalid(OP, "output extent and sampling must be positive"));
        }
        for r in rois {
            let area = (r[2] - r[0]) * (r[3] - r[1]);
            if !(area >= 1.0) || r[2] <= r[0] || r[3] <= r[1] {
                return Err(Error::invalid(OP, format!("degenerate box {r:?} (area < 1 px^2)")));
            }
        }
        let geo = RoiGeom { channels: c, h, w, out, sampling, spatial_scale };
        let data = kernels::roi_align_forward(self.value(feature).data(), rois, geo);
        let t = Tensor::new([rois.len(), c, out, out], data)?;
        let needs = self.needs(feature);
        self.push(OP, t, Op::RoiAlign { feature, rois: rois.to_vec(), geo }, needs)
    }

    /// Rearranges `[N, C r^2, H, W]` into `[N, C, r H, r W]`:
    /// `out[n, c, r i + a, r j + b] = in[n, (c r + a) r + b, i, j]`.
    /// A 1x1 conv to `C r^2` channels followed by this op is a stride-`r`,
    /// `r x r` transposed convolution.
    pub fn pixel_shuffle(&mut self, input: Var, factor: usize) -> Result<Var> {
        const OP: &str = "pixel_shuffle";
        let [n, cr, h, w] = self.value(input).dims4(OP)?;
        let r2 = factor * factor;
        if factor == 0 || cr % r2 != 0 {
            return Err(Error::ShapeMismatch { op: OP, axis: "channels", expected: r2 * (cr / r2.max(1)).max(1), found: cr });
        }
        let c = cr / r2;
        let (ho, wo) = (h * factor, w * factor);
        let mut src = Vec::with_capacity(n * c * ho * wo);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..ho {
                    let (i, a) = (y / factor, y % factor);
                    for x in 0..wo {
                        let (j, b) = (x / factor, x % factor);
                        let ch = (ci * factor + a) * factor + b;
                        src.push(((ni * cr + ch) * h + i) * w + j);
                    }
                }
            }
        }
        let data = self.value(input).data();
        let out: Vec<f64> = src.iter().map(|&k| data[k]).collect();
        let t = Tensor::new([n, c, ho, wo], out)?;
        let needs = self.needs(input);
        self.push(OP, t, Op::PixelShuffle { input, src }, needs)
    }

    /// Selects flat elements into a rank-1 tensor.
    pub fn gather(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(input).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::ShapeMismatch { op: "gather", axis: "index", expected: src.len(), found: bad });
        }
        let data: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let t = Tensor::new([indices.len()], data)?;
        let needs = self.needs(input);
        self.push("gather", t, Op::Gather { input, indices: indices.to_vec() }, needs)
    }

    /// Flattens and concatenates into a rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let len = data.len();
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat", Tensor::new([len], data)?, Op::Concat(parts.to_vec()), needs)
    }

    /// Propagates d(loss)/d(node) to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                axis: "numel",
                expected: 1,
                found: self.value(loss).numel(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            check_finite("backward", &g)?;
            let op = self.nodes[i].op.clone();
            let send = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, contrib: Vec<f64>| {
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match op {
                Op::Leaf => {
                    self.nodes[i].value.accumulate_grad(&g)?;
                }
                Op::Conv2d { input, weight, bias, dims, geom } => {
                    let need_input = self.needs(input);
                    let (gi, gw, gb) = kernels::conv2d_backward(
                        self.value(input).data(),
                        self.value(weight).data(),
                        &g,
                        dims,
                        geom,
                        need_input,
                    );
                    if let Some(gi) = gi {
                        send(&mut grads, input, gi);
                    }
                    if self.needs(weight) {
                        send(&mut grads, weight, gw);
                    }
                    if let Some(b) = bias.filter(|&b| self.needs(b)) {
                        send(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        send(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        send(&mut grads, b, g);
                    }
                }
                Op::Scale(a, f) => send(&mut grads, a, g.iter().map(|x| x * f).collect()),
                Op::Relu(a) => {
                    let x = self.value(a).data();
                    let gi = g.iter().zip(x).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                    send(&mut grads, a, gi);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.data();
                    let gi = g.iter().zip(y).map(|(gv, &s)| gv * s * (1.0 - s)).collect();
                    send(&mut grads, a, gi);
                }
                Op::Sum(a) => {
                    let n = self.value(a).numel();
                    send(&mut grads, a, vec![g[0]; n]);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(pred).data();
                    let n = p.len() as f64;
                    let gi = p
                        .iter()
                        .zip(&target)
                        .map(|(&pv, &t)| {
                            let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                            g[0] * (pc - t) / (pc * (1.0 - pc)) / n
                        })
                        .collect();
                    send(&mut grads, pred, gi);
                }
                Op::SmoothL1 { pred, target } => {
                    let p = self.value(pred).data();
                    let n = p.len() as f64;
                    let gi = p
                        .iter()
                        .zip(&target)
                        .map(|(a, b)| {
                            let d = a - b;
                            let dd = if d.abs() < 1.0 { d } else { d.signum() };
                            g[0] * dd / n
                        })
                        .collect();
                    send(&mut grads, pred, gi);
                }
                Op::Upsample { input, planes, h, w, factor } => {
                    send(&mut grads, input, kernels::upsample_backward(&g, planes, h, w, factor));
                }
                Op::RoiAlign { feature, rois, geo } => {
                    send(&mut grads, feature, kernels::roi_align_backward(&g, &rois, geo));
                }
                Op::Gather { input, indices } => {
                    let mut gi = vec![0.0; self.value(input).numel()];
                    for (gv, &ix) in g.iter().zip(&indices) {
                        gi[ix] += gv;
                    }
                    send(&mut grads, input, gi);
                }
                Op::PixelShuffle { input, src } => {
                    let mut gi = vec![0.0; self.value(input).numel()];
                    for (gv, &k) in g.iter().zip(&src) {
                        gi[k] = *gv;
                    }
                    send(&mut grads, input, gi);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(p).numel();
                        if self.needs(p) {
                            send(&mut grads, p, g[off..off + n].to_vec());
                        }
                        off += n;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Forward-only conv of a tensor through a block.
pub fn conv2d(input: &Tensor, spec: &ConvBlockSpec) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let w = g.constant(spec.weight.clone());
    let b = g.constant(spec.bias.clone());
    let y = g.conv_block(x, spec, ConvVars { weight: w, bias: b })?;
    Ok(g.into_value(y))
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let z = g.add(x, y)?;
    Ok(g.into_value(z))
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.relu(v)?;
    Ok(g.into_value(y))
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.sigmoid(v)?;
    Ok(g.into_value(y))
}

pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let y = g.bce_loss(p, target)?;
    Ok(g.into_value(y))
}

pub fn smooth_l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let y = g.smooth_l1_loss(p, target)?;
    Ok(g.into_value(y))
}
