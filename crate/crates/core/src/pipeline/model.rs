use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::PipelineConfig;
use crate::autograd::{ConvBlockSpec, ConvVars, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::slc::{he_init, SlcModule, SlcVars};
use crate::tensor::Tensor;

/// Standard deviation for the final prediction convs.
const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    stages: Vec<usize>,
    lateral: Vec<usize>,
    fpn_out: Vec<usize>,
    rpn_conv: usize,
    rpn_cls: Vec<usize>,
    rpn_reg: Vec<usize>,
    box_fc1: usize,
    box_fc2: usize,
    box_cls: usize,
    box_reg: usize,
    mask_convs: Vec<usize>,
    mask_up: usize,
    mask_logits: usize,
}

/// Detector parameters: backbone + 2-level pyramid, RPN, box head and mask
/// head, with optional SLC blocks on the box-head RoI features and in the
/// mask head (after the conv stack, before the 2x upsample).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: PipelineConfig,
    convs: Vec<(String, ConvBlockSpec)>,
    layout: Layout,
    pub box_slc: Option<SlcModule>,
    pub mask_slc: Option<SlcModule>,
}

/// Graph handles for every parameter of a bound [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    convs: Vec<ConvVars>,
    box_slc: Option<SlcVars>,
    mask_slc: Option<SlcVars>,
}

/// Raw RPN outputs for one pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct RpnLevel {
    /// `[1, A k, H, W]` objectness logits.
    pub cls: Var,
    /// `[1, 4 A k, H, W]` deltas, channel `(anchor * 4 + coordinate)`.
    pub reg: Var,
}

fn he_std(spec: &ConvBlockSpec) -> f64 {
    libm::sqrt(2.0 / (spec.in_channels * spec.kernel_size * spec.kernel_size) as f64)
}

const SLC_PART_NAMES: [&str; 2] = ["pointwise", "dilated"];

fn slc_param_names(prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    for layer in 1..=3 {
        for part in SLC_PART_NAMES {
            out.push(format!("{prefix}.layer{layer}.{part}"));
        }
    }
    out
}

impl Model {
    /// Builds and initialises every parameter. Each conv draws from a stream
    /// derived from `(seed, name)`, so layers shared by two configurations
    /// start identical.
    pub fn new(config: &PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let config = config.normalized();
        let b = &config.backbone;
        let roi = &config.roi;
        let a = config.anchors.per_location();
        let mut convs: Vec<(String, ConvBlockSpec)> = Vec::new();
        let mut push = |name: String, spec: ConvBlockSpec| {
            convs.push((name, spec));
            convs.len() - 1
        };

        let mut stages = Vec::new();
        let mut in_c = 3;
        for (i, (&c, &s)) in b.stage_channels.iter().zip(&b.stage_strides).enumerate() {
            stages.push(push(format!("backbone.stage{}", i + 1), ConvBlockSpec::same(in_c, c, 3, 1)?.with_stride(s)));
            in_c = c;
        }
        let first_level = b.stage_channels.len() - b.pyramid_levels;
        let strides = b.pyramid_strides();
        let mut lateral = Vec::new();
        let mut fpn_out = Vec::new();
        for p in 0..b.pyramid_levels {
            let c = b.stage_channels[first_level + p];
            lateral.push(push(format!("fpn.lateral{p}"), ConvBlockSpec::same(c, b.fpn_channels, 1, 1)?));
        }
        for p in 0..b.pyramid_levels {
            fpn_out.push(push(format!("fpn.output{p}"), ConvBlockSpec::same(b.fpn_channels, b.fpn_channels, 3, 1)?));
        }
        let f = b.fpn_channels;
        let rpn_conv = push("rpn.conv".into(), ConvBlockSpec::same(f, f, 3, 1)?);
        let mut rpn_cls = Vec::new();
        let mut rpn_reg = Vec::new();
        for (p, s) in strides.iter().enumerate() {
            let k = config.anchors.levels.iter().filter(|l| l.stride == *s).count();
            // a pyramid level without anchors still gets a one-channel head so
            // the parameter schema does not depend on the anchor layout
            let k = k.max(1);
            rpn_cls.push(push(format!("rpn.cls{p}"), ConvBlockSpec::same(f, a * k, 1, 1)?));
            rpn_reg.push(push(format!("rpn.reg{p}"), ConvBlockSpec::same(f, 4 * a * k, 1, 1)?));
        }
        let box_fc1 = push("box.fc1".into(), ConvBlockSpec::new(f, roi.box_hidden, roi.box_extent, 1, 0)?);
        let box_fc2 = push("box.fc2".into(), ConvBlockSpec::same(roi.box_hidden, roi.box_hidden, 1, 1)?);
        let box_cls = push("box.cls".into(), ConvBlockSpec::same(roi.box_hidden, 1, 1, 1)?);
        let box_reg = push("box.reg".into(), ConvBlockSpec::same(roi.box_hidden, 4, 1, 1)?);
        let mut mask_convs = Vec::new();
        let mc = roi.mask_channels;
        for i in 0..roi.mask_convs {
            let cin = if i == 0 { f } else { mc };
            mask_convs.push(push(format!("mask.conv{}", i + 1), ConvBlockSpec::same(cin, mc, 3, 1)?));
        }
        let mask_in = if roi.mask_convs == 0 { f } else { mc };
        if mask_in != mc {
            return Err(Error::invalid("model", "mask head without convs needs fpn_channels == mask_channels"));
        }
        // 2x2 stride-2 transposed conv, as a 1x1 conv to 4 mc channels + pixel shuffle
        let mask_up = push("mask.deconv".into(), ConvBlockSpec::same(mc, 4 * mc, 1, 1)?);
        let mask_logits = push("mask.logits".into(), ConvBlockSpec::same(mc, 1, 1, 1)?);

        let outputs = [rpn_cls.as_slice(), rpn_reg.as_slice(), &[box_cls, box_reg, mask_logits]].concat();
        for (i, (name, spec)) in convs.iter_mut().enumerate() {
            let mut rng = SeededRng::derived(seed, name);
            let std = if outputs.contains(&i) { HEAD_INIT_STD } else { he_std(spec) };
            spec.weight.data_mut().iter_mut().for_each(|v| *v = rng.normal() * std);
        }

        let make_slc = |channels: usize, prefix: &str| -> Result<SlcModule> {
            let mut m = SlcModule::new(crate::slc::SlcConfig { channels, ..config.slc })?;
            for (spec, name) in m.convs_mut().zip(slc_param_names(prefix)) {
                he_init(spec, &mut SeededRng::derived(seed, &name));
            }
            Ok(m)
        };
        let mask_slc = if config.slc.enabled { Some(make_slc(mc, "mask.slc")?) } else { None };
        let box_slc = if config.slc.enabled && config.slc.attach_to_cls_reg {
            Some(make_slc(f, "box.slc")?)
        } else {
            None
        };

        Ok(Self {
            layout: Layout {
                stages,
                lateral,
                fpn_out,
                rpn_conv,
                rpn_cls,
                rpn_reg,
                box_fc1,
                box_fc2,
                box_cls,
                box_reg,
                mask_convs,
                mask_up,
                mask_logits,
            },
            convs,
            config,
            box_slc,
            mask_slc,
        })
    }

    /// Every parameter tensor with its name, in a fixed order:
    /// plain convs, then the box-head SLC, then the mask-head SLC.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, spec) in &self.convs {
            out.push((format!("{name}.weight"), &spec.weight));
            out.push((format!("{name}.bias"), &spec.bias));
        }
        for (module, prefix) in [(&self.box_slc, "box.slc"), (&self.mask_slc, "mask.slc")] {
            if let Some(m) = module {
                for (spec, name) in m.convs().zip(slc_param_names(prefix)) {
                    out.push((format!("{name}.weight"), &spec.weight));
                    out.push((format!("{name}.bias"), &spec.bias));
                }
            }
        }
        out
    }

    /// Mutable parameters in the order of [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (_, spec) in self.convs.iter_mut() {
            out.push(&mut spec.weight);
            out.push(&mut spec.bias);
        }
        for m in [self.box_slc.as_mut(), self.mask_slc.as_mut()].into_iter().flatten() {
            for spec in m.convs_mut() {
                out.push(&mut spec.weight);
                out.push(&mut spec.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces parameter values by name. Every parameter must be present
    /// with a matching shape; extra names are rejected.
    pub fn load_params(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        if params.len() != names.len() {
            return Err(Error::invalid(
                "load_params",
                format!("expected {} parameters, found {}", names.len(), params.len()),
            ));
        }
        for (name, slot) in names.iter().zip(self.params_mut()) {
            let Some((_, t)) = params.iter().find(|(n, _)| n == name) else {
                return Err(Error::invalid("load_params", format!("missing parameter {name}")));
            };
            if t.shape() != slot.shape() {
                return Err(Error::invalid(
                    "load_params",
                    format!("{name}: shape {:?} does not match {:?}", t.shape(), slot.shape()),
                ));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Binds every parameter; `trainable = false` inserts constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let mut bind = |spec: &ConvBlockSpec| {
            if trainable {
                g.bind_conv(spec)
            } else {
                ConvVars { weight: g.constant(spec.weight.clone()), bias: g.constant(spec.bias.clone()) }
            }
        };
        let convs = self.convs.iter().map(|(_, s)| bind(s)).collect();
        let mut bind_slc = |m: &SlcModule| {
            let mut it = m.convs().map(&mut bind);
            let mut next = || it.next().expect("six convs");
            let v: [ConvVars; 6] = core::array::from_fn(|_| next());
            SlcVars { pointwise: [v[0], v[2], v[4]], dilated: [v[1], v[3], v[5]] }
        };
        let box_slc = self.box_slc.as_ref().map(&mut bind_slc);
        let mask_slc = self.mask_slc.as_ref().map(&mut bind_slc);
        ModelVars { convs, box_slc, mask_slc }
    }

    /// Copies the gradients recorded on `g` into the parameters' grad slots.
    /// Parameters the loss did not reach receive zeros.
    pub fn load_grads(&mut self, g: &Graph, vars: &ModelVars) -> Result<()> {
        let mut handles: Vec<Var> = Vec::new();
        for c in &vars.convs {
            handles.extend([c.weight, c.bias]);
        }
        for s in [&vars.box_slc, &vars.mask_slc].into_iter().flatten() {
            for i in 0..3 {
                handles.extend([s.pointwise[i].weight, s.pointwise[i].bias, s.dilated[i].weight, s.dilated[i].bias]);
            }
        }
        for (p, v) in self.params_mut().into_iter().zip(handles) {
            p.set_requires_grad(true);
            p.zero_grad();
            if let Some(gr) = g.grad(v) {
                p.accumulate_grad(gr)?;
            } else {
                let zeros = alloc::vec![0.0; p.numel()];
                p.accumulate_grad(&zeros)?;
            }
        }
        Ok(())
    }

    fn conv(&self, g: &mut Graph, vars: &ModelVars, idx: usize, x: Var) -> Result<Var> {
        g.conv_block(x, &self.convs[idx].1, vars.convs[idx])
    }

    fn conv_relu(&self, g: &mut Graph, vars: &ModelVars, idx: usize, x: Var) -> Result<Var> {
        let y = self.conv(g, vars, idx, x)?;
        g.relu(y)
    }

    /// Image `[1, 3, H, W]` to pyramid features, finest level first.
    pub fn backbone(&self, g: &mut Graph, vars: &ModelVars, image: Var) -> Result<Vec<Var>> {
        let [n, c, h, w] = g.value(image).dims4("backbone_forward")?;
        if n != 1 || c != 3 {
            return Err(Error::invalid("backbone_forward", format!("expected a [1, 3, H, W] image, got {:?}", [n, c, h, w])));
        }
        let max_stride = *self.config.backbone.cumulative_strides().last().expect("non-empty");
        if h % max_stride != 0 || w % max_stride != 0 || h == 0 || w == 0 {
            let pad = |v: usize| (max_stride - v % max_stride) % max_stride;
            return Err(Error::invalid(
                "backbone_forward",
                format!(
                    "image extent {h}x{w} is not divisible by the largest stride {max_stride}; pad by {} rows and {} columns",
                    pad(h),
                    pad(w)
                ),
            ));
        }
        let b = &self.config.backbone;
        let mut std = g.value(image).clone();
        let plane = h * w;
        for (c, chan) in std.data_mut().chunks_mut(plane).enumerate() {
            chan.iter_mut().for_each(|v| *v = (*v - b.pixel_mean[c]) / b.pixel_std[c]);
        }
        // the image is data, never a parameter, so it enters as a constant
        let mut x = g.constant(std);
        let mut outs = Vec::new();
        for &s in &self.layout.stages {
            x = self.conv_relu(g, vars, s, x)?;
            outs.push(x);
        }
        let levels = self.config.backbone.pyramid_levels;
        let feats = &outs[outs.len() - levels..];
        let mut merged: Vec<Var> = Vec::with_capacity(levels);
        for p in (0..levels).rev() {
            let lat = self.conv(g, vars, self.layout.lateral[p], feats[p])?;
            let m = match merged.last() {
                Some(&coarser) => {
                    let up = g.upsample(coarser, 2)?;
                    g.add(lat, up)?
                }
                None => lat,
            };
            merged.push(m);
        }
        merged.reverse();
        merged
            .into_iter()
            .enumerate()
            .map(|(p, m)| self.conv(g, vars, self.layout.fpn_out[p], m))
            .collect()
    }

    /// Shared 3x3 conv, then per-level objectness and delta convs.
    pub fn rpn(&self, g: &mut Graph, vars: &ModelVars, features: &[Var]) -> Result<Vec<RpnLevel>> {
        features
            .iter()
            .enumerate()
            .map(|(p, &f)| {
                let h = self.conv_relu(g, vars, self.layout.rpn_conv, f)?;
                Ok(RpnLevel {
                    cls: self.conv(g, vars, self.layout.rpn_cls[p], h)?,
                    reg: self.conv(g, vars, self.layout.rpn_reg[p], h)?,
                })
            })
            .collect()
    }

    fn roi_scale(&self) -> f64 {
        1.0 / self.config.backbone.pyramid_strides()[0] as f64
    }

    /// Classification logits `[N, 1, 1, 1]` and deltas `[N, 4, 1, 1]` for RoIs
    /// pooled from the finest pyramid level.
    pub fn box_head(&self, g: &mut Graph, vars: &ModelVars, feature: Var, rois: &[[f64; 4]]) -> Result<(Var, Var)> {
        let roi = &self.config.roi;
        let mut x = g.roi_align(feature, rois, self.roi_scale(), roi.box_extent, roi.sampling_ratio)?;
        if let (Some(m), Some(v)) = (&self.box_slc, &vars.box_slc) {
            let s = m.forward_graph(g, x, v)?;
            x = g.relu(s)?;
        }
        let x = self.conv_relu(g, vars, self.layout.box_fc1, x)?;
        let x = self.conv_relu(g, vars, self.layout.box_fc2, x)?;
        Ok((self.conv(g, vars, self.layout.box_cls, x)?, self.conv(g, vars, self.layout.box_reg, x)?))
    }

    /// Mask logits `[N, 1, M, M]` for RoIs pooled from the finest level.
    pub fn mask_head(&self, g: &mut Graph, vars: &ModelVars, feature: Var, rois: &[[f64; 4]]) -> Result<Var> {
        let roi = &self.config.roi;
        let x = g.roi_align(feature, rois, self.roi_scale(), roi.mask_roi_extent, roi.sampling_ratio)?;
        self.mask_head_from_features(g, vars, x)
    }

    /// Conv stack, optional SLC, 2x2 stride-2 deconv + ReLU, 1x1 logits.
    pub fn mask_head_from_features(&self, g: &mut Graph, vars: &ModelVars, roi_features: Var) -> Result<Var> {
        let mut x = roi_features;
        for &c in &self.layout.mask_convs {
            x = self.conv_relu(g, vars, c, x)?;
        }
        if let (Some(m), Some(v)) = (&self.mask_slc, &vars.mask_slc) {
            let s = m.forward_graph(g, x, v)?;
            x = g.relu(s)?;
        }
        let x = self.conv_relu(g, vars, self.layout.mask_up, x)?;
        let x = g.pixel_shuffle(x, 2)?;
        self.conv(g, vars, self.layout.mask_logits, x)
    }

    /// Mutable access to a named plain conv (for fixtures and tests).
    pub fn conv_mut(&mut self, name: &str) -> Option<&mut ConvBlockSpec> {
        self.convs.iter_mut().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slc::SlcConfig;

    fn tiny() -> PipelineConfig {
        PipelineConfig::desk()
    }

    #[test]
    fn pyramid_extents() {
        let mut cfg = PipelineConfig::default();
        cfg.backbone.stage_channels = alloc::vec![4, 4, 4, 4];
        cfg.backbone.fpn_channels = 4;
        cfg.roi.mask_channels = 4;
        cfg.roi.box_hidden = 4;
        let m = Model::new(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 3, 256, 256]));
        let f = m.backbone(&mut g, &v, x).unwrap();
        assert_eq!(g.value(f[0]).shape(), [1, 4, 32, 32]);
        assert_eq!(g.value(f[1]).shape(), [1, 4, 16, 16]);
    }

    #[test]
    fn indivisible_extent_reports_padding() {
        let m = Model::new(&tiny(), 1).unwrap();
        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 3, 60, 64]));
        let e = m.backbone(&mut g, &v, x).unwrap_err();
        assert!(alloc::format!("{e}").contains("pad by 4 rows"), "{e}");
    }

    #[test]
    fn mean_image_zero_bias_gives_zero_features() {
        let m = Model::new(&tiny(), 3).unwrap();
        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let mean = m.config.backbone.pixel_mean;
        let flat: Vec<f64> = mean.iter().flat_map(|&c| core::iter::repeat(c).take(32 * 32)).collect();
        let x = g.constant(Tensor::new([1, 3, 32, 32], flat).unwrap());
        for f in m.backbone(&mut g, &v, x).unwrap() {
            assert!(g.value(f).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn slc_only_adds_parameters() {
        let mut on = tiny();
        on.slc = SlcConfig { enabled: true, ..on.slc };
        let mut off = tiny();
        off.slc.enabled = false;
        let a = Model::new(&on, 9).unwrap();
        let b = Model::new(&off, 9).unwrap();
        let pa = a.named_params();
        let pb = b.named_params();
        let shared: Vec<_> = pa.iter().filter(|(n, _)| !n.starts_with("mask.slc.")).collect();
        assert_eq!(shared.len(), pb.len());
        for ((na, ta), (nb, tb)) in shared.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb, "{na} differs");
        }
        assert_eq!(a.param_count() - b.param_count(), a.mask_slc.as_ref().unwrap().param_count());
    }

    #[test]
    fn mask_head_extent() {
        let m = Model::new(&tiny(), 2).unwrap();
        let mut g = Graph::new();
        let v = m.bind(&mut g, false);
        let f = g.constant(Tensor::full([1, 16, 16, 16], 0.1));
        let out = m.mask_head(&mut g, &v, f, &[[4.0, 4.0, 30.0, 20.0]]).unwrap();
        assert_eq!(g.value(out).shape(), [1, 1, 28, 28]);
    }
}
