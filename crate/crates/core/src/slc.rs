//! Sequence local context (SLC) block and receptive-field arithmetic.
//!
//! The block is three chained layers. Layer `i` is a 1x1 conv followed by a
//! 3x3 conv with dilation `(1, r1, r2)[i]`, each conv followed by ReLU, and
//! layer `i + 1` consumes the activated output of layer `i`. The block output
//! is the element-wise sum of the *pre-activation* 3x3 outputs of the layers
//! selected in [`FusedLayers`]. "Same" padding keeps every layer at the input's
//! spatial size, so the sum is always defined.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autograd::{ConvBlockSpec, ConvVars, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Subset of layers `{1, 2, 3}` entering the fusion sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FusedLayers([bool; 3]);

impl FusedLayers {
    pub const ALL: FusedLayers = FusedLayers([true, true, true]);
    /// Layers 1 and 3; the two-layer ablation variant.
    pub const FIRST_AND_LAST: FusedLayers = FusedLayers([true, false, true]);
    pub const FIRST: FusedLayers = FusedLayers([true, false, false]);

    /// Builds from 1-based layer numbers. Layer 1 must be present.
    pub fn from_layers(layers: &[usize]) -> Result<Self> {
        let mut set = [false; 3];
        for &l in layers {
            if !(1..=3).contains(&l) {
                return Err(Error::invalid("fused_layers", format!("layer {l} is not in 1..=3")));
            }
            set[l - 1] = true;
        }
        if !set[0] {
            return Err(Error::invalid("fused_layers", "must contain layer 1"));
        }
        Ok(Self(set))
    }

    pub fn contains(&self, layer: usize) -> bool {
        (1..=3).contains(&layer) && self.0[layer - 1]
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=3).filter(|&l| self.contains(l))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Highest selected layer.
    pub fn deepest(&self) -> usize {
        self.layers().last().unwrap_or(1)
    }
}

impl fmt::Display for FusedLayers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layers().map(|l| format!("{l}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for FusedLayers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::invalid("fused_layers", format!("not a layer number: {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(&layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlcConfig {
    pub r1: usize,
    pub r2: usize,
    pub channels: usize,
    pub fused_layers: FusedLayers,
    /// Also place a block on the RoI features feeding classification/regression.
    pub attach_to_cls_reg: bool,
    /// `false` gives the plain baseline mask head.
    pub enabled: bool,
}

impl Default for SlcConfig {
    fn default() -> Self {
        Self {
            r1: 2,
            r2: 3,
            channels: 256,
            fused_layers: FusedLayers::ALL,
            attach_to_cls_reg: false,
            enabled: true,
        }
    }
}

impl SlcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r1 == 0 || self.r2 == 0 {
            return Err(Error::invalid("slc", "dilation rates must be >= 1"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("slc", "channel count must be positive"));
        }
        if !self.fused_layers.contains(1) {
            return Err(Error::invalid("slc", "fused layers must contain layer 1"));
        }
        Ok(())
    }

    pub fn rates(&self) -> [usize; 3] {
        [1, self.r1, self.r2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlcLayer {
    pub pointwise: ConvBlockSpec,
    pub dilated: ConvBlockSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlcModule {
    pub config: SlcConfig,
    pub layers: [SlcLayer; 3],
}

/// Graph handles for the six convs of a bound module.
#[derive(Debug, Clone, Copy)]
pub struct SlcVars {
    pub pointwise: [ConvVars; 3],
    pub dilated: [ConvVars; 3],
}

impl SlcModule {
    /// Zero-initialised module.
    pub fn new(config: SlcConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let layer = |rate: usize| -> Result<SlcLayer> {
            Ok(SlcLayer {
                pointwise: ConvBlockSpec::same(c, c, 1, 1)?,
                dilated: ConvBlockSpec::same(c, c, 3, rate)?,
            })
        };
        let [a, b, d] = config.rates();
        Ok(Self {
            config,
            layers: [layer(a)?, layer(b)?, layer(d)?],
        })
    }

    /// He-normal weights, zero biases.
    pub fn init(&mut self, rng: &mut SeededRng) {
        for spec in self.convs_mut() {
            he_init(spec, rng);
        }
    }

    /// Sets every weight to `w` and every bias to zero.
    pub fn fill_weights(&mut self, w: f64) {
        for spec in self.convs_mut() {
            spec.weight.data_mut().iter_mut().for_each(|v| *v = w);
            spec.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Convs in canonical order: `pointwise1, dilated1, pointwise2, ...`.
    pub fn convs(&self) -> impl Iterator<Item = &ConvBlockSpec> {
        self.layers.iter().flat_map(|l| [&l.pointwise, &l.dilated])
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut ConvBlockSpec> {
        self.layers.iter_mut().flat_map(|l| [&mut l.pointwise, &mut l.dilated])
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(ConvBlockSpec::param_count).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> SlcVars {
        let pairs: [(ConvVars, ConvVars); 3] = core::array::from_fn(|i| {
            let l = &self.layers[i];
            (g.bind_conv(&l.pointwise), g.bind_conv(&l.dilated))
        });
        SlcVars {
            pointwise: pairs.map(|p| p.0),
            dilated: pairs.map(|p| p.1),
        }
    }

    /// Records the block on `g`.
    pub fn forward_graph(&self, g: &mut Graph, input: Var, vars: &SlcVars) -> Result<Var> {
        let c = g.value(input).shape().get(1).copied().unwrap_or(0);
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "slc_forward",
                axis: "channels",
                expected: self.config.channels,
                found: c,
            });
        }
        let deepest = self.config.fused_layers.deepest();
        let mut feed = input;
        let mut fused = Vec::with_capacity(3);
        for (i, layer) in self.layers.iter().enumerate().take(deepest) {
            let a = g.conv_block(feed, &layer.pointwise, vars.pointwise[i])?;
            let a = g.relu(a)?;
            let o = g.conv_block(a, &layer.dilated, vars.dilated[i])?;
            if self.config.fused_layers.contains(i + 1) {
                fused.push(o);
            }
            if i + 1 < deepest {
                feed = g.relu(o)?;
            }
        }
        g.add_all(&fused)
    }

    /// Forward pass on a plain tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let vars = self.bind(&mut g);
        let y = self.forward_graph(&mut g, x, &vars)?;
        Ok(g.into_value(y))
    }
}

/// Free-function form of [`SlcModule::forward`].
pub fn slc_forward(input: &Tensor, module: &SlcModule) -> Result<Tensor> {
    module.forward(input)
}

/// He-normal initialisation (fan-in) with zero bias.
pub fn he_init(spec: &mut ConvBlockSpec, rng: &mut SeededRng) {
    let fan_in = (spec.in_channels * spec.kernel_size * spec.kernel_size) as f64;
    let std = libm::sqrt(2.0 / fan_in);
    spec.weight.data_mut().iter_mut().for_each(|v| *v = rng.normal() * std);
    spec.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
}

/// Receptive field of one dilated conv: `(r - 1)(k - 1) + k`.
pub fn receptive_field(rate: usize, kernel: usize) -> Result<usize> {
    if rate == 0 || kernel == 0 {
        return Err(Error::invalid("receptive_field", "rate and kernel size must be >= 1"));
    }
    Ok((rate - 1) * (kernel - 1) + kernel)
}

/// Receptive field of two stacked layers: `R1 + R2 - 1`.
pub fn compose_receptive_fields(r1: usize, r2: usize) -> Result<usize> {
    if r1 == 0 || r2 == 0 {
        return Err(Error::invalid("compose_receptive_fields", "extents must be >= 1"));
    }
    Ok(r1 + r2 - 1)
}

/// Cumulative receptive field at each layer output, folded from the
/// single-layer and composition rules.
pub fn slc_layer_receptive_fields(r1: usize, r2: usize) -> Result<[usize; 3]> {
    if r1 == 0 || r2 == 0 {
        return Err(Error::invalid("slc_layer_receptive_fields", "rates must be >= 1"));
    }
    let mut out = [0; 3];
    let mut acc = 1;
    for (i, rate) in [1, r1, r2].into_iter().enumerate() {
        let block = compose_receptive_fields(receptive_field(1, 1)?, receptive_field(rate, 3)?)?;
        acc = compose_receptive_fields(acc, block)?;
        out[i] = acc;
    }
    Ok(out)
}

/// Closed forms `(3, 5 + 2(r1 - 1), 3 + 2(r1 + r2))`.
pub fn closed_form_receptive_fields(r1: usize, r2: usize) -> [usize; 3] {
    [3, 5 + 2 * (r1 - 1), 3 + 2 * (r1 + r2)]
}

/// Single-channel module with all-ones weights and zero biases.
pub fn impulse_probe(config: &SlcConfig) -> Result<SlcModule> {
    let mut m = SlcModule::new(SlcConfig { channels: 1, ..*config })?;
    m.fill_weights(1.0);
    Ok(m)
}

/// Default square field for [`measure_receptive_field`]: twice the analytic
/// extent plus one.
pub fn probe_field(config: &SlcConfig) -> usize {
    2 * closed_form_receptive_fields(config.r1.max(1), config.r2.max(1))[2] + 1
}

/// Support width of the fused output when an impulse is fed through `module`
/// on a `field x field` zero canvas. The module must have strictly positive
/// weights and zero biases; the support must not reach the canvas border.
pub fn measure_receptive_field(module: &SlcModule, field: usize) -> Result<usize> {
    const OP: &str = "measure_receptive_field";
    let c = module.config.channels;
    if module.convs().any(|s| s.weight.data().iter().any(|&w| w <= 0.0)) {
        return Err(Error::invalid(OP, "weights must be strictly positive"));
    }
    if field == 0 {
        return Err(Error::invalid(OP, "field must be non-empty"));
    }
    let mid = field / 2;
    let mut input = Tensor::zeros([1, c, field, field]);
    for ch in 0..c {
        input.data_mut()[(ch * field + mid) * field + mid] = 1.0;
    }
    let out = module.forward(&input)?;
    let plane = field * field;
    let nonzero = |y: usize, x: usize| (0..c).any(|ch| out.data()[ch * plane + y * field + x] != 0.0);
    let rows: Vec<usize> = (0..field).filter(|&y| (0..field).any(|x| nonzero(y, x))).collect();
    let cols: Vec<usize> = (0..field).filter(|&x| (0..field).any(|y| nonzero(y, x))).collect();
    let (Some(&top), Some(&bottom)) = (rows.first(), rows.last()) else {
        return Err(Error::invalid(OP, "no response to the impulse"));
    };
    let (left, right) = (cols[0], *cols.last().unwrap());
    if top == 0 || left == 0 || bottom == field - 1 || right == field - 1 {
        return Err(Error::invalid(OP, format!("field {field} too small to contain the support")));
    }
    let height = bottom - top + 1;
    let width = right - left + 1;
    if height != width {
        return Err(Error::invalid(OP, format!("anisotropic support {height}x{width}")));
    }
    Ok(width)
}
