//! Declarative network descriptions, the architecture presets and the forward
//! engine.
//!
//! A [`NetworkSpec`] runs in one of two modes:
//!
//! * `empirical` – layers are applied verbatim.
//! * `def51` – the analysable variant: every conv is followed by a plain ReLU,
//!   conv feature maps are scaled by `1/√N` except for the last conv, and the
//!   network ends with an arithmetic mean over channels. The scaling is
//!   inserted by the engine and must not be written into the layer list.
//!
//! Specs serialize to JSON as
//! `{"mode": "empirical", "input": [c, h, w], "layers": [{"kind": "conv", "kernel": 3, "stride": 1, "pad": 1, "out": 64}, ...]}`.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::tensor::{self, FeatureMaps, PatchIndex};
use crate::weights::FilterBank;

fn one() -> usize {
    1
}

fn default_slope() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        out: usize,
    },
    Relu,
    LeakyRelu {
        #[serde(default = "default_slope")]
        slope: f64,
    },
    MaxPool {
        kernel: usize,
        /// Defaults to `kernel`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
        #[serde(default)]
        pad: usize,
    },
    L2Pool {
        kernel: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
        #[serde(default)]
        pad: usize,
    },
    AvgPool {
        kernel: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
        #[serde(default)]
        pad: usize,
    },
    Upsample {
        factor: usize,
    },
    /// Top-left crop; missing target dims default to the network input dims.
    Crop {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<usize>,
    },
    ChannelMean,
    Scale {
        factor: f64,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, pad: usize, out: usize) -> Self {
        LayerSpec::Conv { kernel, stride, pad, out }
    }

    pub fn max_pool(kernel: usize) -> Self {
        LayerSpec::MaxPool { kernel, stride: None, pad: 0 }
    }

    pub fn l2_pool(kernel: usize) -> Self {
        LayerSpec::L2Pool { kernel, stride: None, pad: 0 }
    }

    pub fn avg_pool(kernel: usize) -> Self {
        LayerSpec::AvgPool { kernel, stride: None, pad: 0 }
    }

    pub fn crop_to_input() -> Self {
        LayerSpec::Crop { height: None, width: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::L2Pool { .. } => "l2_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::Upsample { .. } => "upsample",
            LayerSpec::Crop { .. } => "crop",
            LayerSpec::ChannelMean => "channel_mean",
            LayerSpec::Scale { .. } => "scale",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::LeakyRelu { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Empirical,
    Def51,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default)]
    pub mode: Mode,
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Rejects parameters that the layer kind does not take.
fn check_layer_keys(i: usize, layer: &serde_json::Value) -> Result<()> {
    let Some(obj) = layer.as_object() else {
        return Err(Error::Format(format!("layer {i} is not an object")));
    };
    let Some(kind) = obj.get("kind").and_then(|k| k.as_str()) else {
        return Err(Error::Format(format!("layer {i} has no kind")));
    };
    let allowed: &[&str] = match kind {
        "conv" => &["kernel", "stride", "pad", "out"],
        "leaky_relu" => &["slope"],
        "max_pool" | "l2_pool" | "avg_pool" => &["kernel", "stride", "pad"],
        "upsample" => &["factor"],
        "crop" => &["height", "width"],
        "scale" => &["factor"],
        _ => &[],
    };
    for key in obj.keys() {
        if key != "kind" && !allowed.contains(&key.as_str()) {
            return param_err(format!("layer {i} ({kind}) does not take `{key}`"));
        }
    }
    Ok(())
}

/// A layer resolved against its input dims.
#[derive(Debug, Clone)]
pub enum Step {
    Conv { bank_layer: usize, patches: PatchIndex, out: usize, last: bool },
    Relu,
    LeakyRelu(f64),
    MaxPool(PatchIndex),
    L2Pool(PatchIndex),
    AvgPool(PatchIndex),
    Upsample(usize),
    Crop(usize, usize),
    ChannelMean,
    Scale(f64),
}

/// Executable form of a spec: resolved steps plus the dims before each step.
#[derive(Debug, Clone)]
pub struct Plan {
    pub steps: Vec<Step>,
    /// `dims[i]` is the input of `steps[i]`; the last entry is the output.
    pub dims: Vec<Dims>,
    conv_shapes: Vec<(usize, usize)>,
}

impl Plan {
    pub fn input_dims(&self) -> Dims {
        self.dims[0]
    }

    pub fn output_dims(&self) -> Dims {
        *self.dims.last().expect("plan has input dims")
    }

    pub fn conv_shapes(&self) -> &[(usize, usize)] {
        &self.conv_shapes
    }
}

fn pool_patches(dims: Dims, kernel: usize, stride: Option<usize>, pad: usize) -> Result<PatchIndex> {
    PatchIndex::pooling(dims.height, dims.width, kernel, stride.unwrap_or(kernel), pad)
}

impl NetworkSpec {
    pub fn new(mode: Mode, input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { mode, input, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn empirical(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        Self::new(Mode::Empirical, input, layers)
    }

    pub fn def51(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        Self::new(Mode::Def51, input, layers)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(layers) = value.get("layers").and_then(|l| l.as_array()) {
            for (i, layer) in layers.iter().enumerate() {
                check_layer_keys(i, layer)?;
            }
        }
        let spec: NetworkSpec = serde_json::from_value(value)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    pub fn input_dims(&self) -> Dims {
        Dims::new(self.input[0], self.input[1], self.input[2])
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Per-layer dims, starting with the input.
    pub fn dim_trace(&self) -> Result<Vec<Dims>> {
        Ok(self.plan()?.dims)
    }

    pub fn output_dims(&self) -> Result<Dims> {
        Ok(self.plan()?.output_dims())
    }

    /// `(filter count, filter length)` for every conv layer, in order.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize)>> {
        Ok(self.plan()?.conv_shapes)
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conv()).count()
    }

    fn check_def51(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::WrongVariant(format!("def51 network: {msg}")));
        let n = self.layers.len();
        if n < 3 || self.layers[n - 1] != LayerSpec::ChannelMean {
            return bad("must end with conv, relu, channel_mean".into());
        }
        if !self.layers[n - 3].is_conv() || self.layers[n - 2] != LayerSpec::Relu {
            return bad("the layer before channel_mean must be conv followed by relu".into());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { .. } => {
                    if self.layers.get(i + 1) != Some(&LayerSpec::Relu) {
                        return bad(format!("conv at layer {i} is not followed by relu"));
                    }
                }
                LayerSpec::Relu => {
                    if i == 0 || !self.layers[i - 1].is_conv() {
                        return bad(format!("relu at layer {i} does not follow a conv"));
                    }
                }
                LayerSpec::ChannelMean if i + 1 != n => {
                    return bad("channel_mean may only appear last".into());
                }
                LayerSpec::LeakyRelu { .. } | LayerSpec::Scale { .. } | LayerSpec::Crop { .. } => {
                    return bad(format!("layer kind {} is not allowed", layer.name()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Resolves every layer against its input dims. Fails on any parameter or
    /// shape inconsistency.
    pub fn plan(&self) -> Result<Plan> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return shape_err(format!("input dims must be positive, got {:?}", self.input));
        }
        if self.mode == Mode::Def51 {
            self.check_def51()?;
        }
        let last_conv = self.layers.iter().rposition(LayerSpec::is_conv);
        let mut dims = vec![self.input_dims()];
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut conv_shapes = Vec::new();
        let mut cur = self.input_dims();
        let mut pending_scale: Option<f64> = None;

        for (i, layer) in self.layers.iter().enumerate() {
            let ctx = |e: Error| match e {
                Error::Shape(m) => Error::Shape(format!("layer {i} ({}): {m}", layer.name())),
                Error::Parameter(m) => Error::Parameter(format!("layer {i} ({}): {m}", layer.name())),
                other => other,
            };
            let (step, next) = match layer {
                LayerSpec::Conv { kernel, stride, pad, out } => {
                    if *out == 0 {
                        return param_err(format!("layer {i}: conv needs at least one output channel"));
                    }
                    let patches =
                        PatchIndex::new(cur.height, cur.width, *kernel, *stride, *pad).map_err(ctx)?;
                    let (oh, ow) = patches.out_dims();
                    let last = Some(i) == last_conv;
                    if self.mode == Mode::Def51 && !last {
                        pending_scale = Some(1.0 / (*out as f64).sqrt());
                    }
                    conv_shapes.push((*out, cur.channels * kernel * kernel));
                    (
                        Step::Conv { bank_layer: conv_shapes.len() - 1, patches, out: *out, last },
                        Dims::new(*out, oh, ow),
                    )
                }
                LayerSpec::Relu => (Step::Relu, cur),
                LayerSpec::LeakyRelu { slope } => {
                    if !(0.0..1.0).contains(slope) {
                        return param_err(format!("layer {i}: leaky_relu slope {slope} outside [0, 1)"));
                    }
                    (Step::LeakyRelu(*slope), cur)
                }
                LayerSpec::MaxPool { kernel, stride, pad }
                | LayerSpec::L2Pool { kernel, stride, pad }
                | LayerSpec::AvgPool { kernel, stride, pad } => {
                    let p = pool_patches(cur, *kernel, *stride, *pad).map_err(ctx)?;
                    let (oh, ow) = p.out_dims();
                    let next = Dims::new(cur.channels, oh, ow);
                    let step = match layer {
                        LayerSpec::MaxPool { .. } => Step::MaxPool(p),
                        LayerSpec::L2Pool { .. } => Step::L2Pool(p),
                        _ => Step::AvgPool(p),
                    };
                    (step, next)
                }
                LayerSpec::Upsample { factor } => {
                    if *factor == 0 {
                        return param_err(format!("layer {i}: upsample factor must be at least 1"));
                    }
                    (
                        Step::Upsample(*factor),
                        Dims::new(cur.channels, cur.height * factor, cur.width * factor),
                    )
                }
                LayerSpec::Crop { height, width } => {
                    let th = height.unwrap_or(self.input[1]);
                    let tw = width.unwrap_or(self.input[2]);
                    if th == 0 || tw == 0 || th > cur.height || tw > cur.width {
                        return shape_err(format!(
                            "layer {i}: cannot crop {}x{} to {th}x{tw}",
                            cur.height, cur.width
                        ));
                    }
                    (Step::Crop(th, tw), Dims::new(cur.channels, th, tw))
                }
                LayerSpec::ChannelMean => (Step::ChannelMean, Dims::new(1, cur.height, cur.width)),
                LayerSpec::Scale { factor } => {
                    if !factor.is_finite() {
                        return param_err(format!("layer {i}: scale factor must be finite"));
                    }
                    (Step::Scale(*factor), cur)
                }
            };
            steps.push(step);
            dims.push(next);
            cur = next;
            // def51: the 1/√N normalisation follows the conv's ReLU.
            if matches!(layer, LayerSpec::Relu) {
                if let Some(s) = pending_scale.take() {
                    steps.push(Step::Scale(s));
                    dims.push(cur);
                }
            }
        }
        Ok(Plan { steps, dims, conv_shapes })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Output of every executed step, when retained.
    pub snapshots: Vec<FeatureMaps>,
    pub output: FeatureMaps,
}

pub fn check_bank(plan: &Plan, bank: &FilterBank) -> Result<()> {
    let want = plan.conv_shapes();
    let got = bank.shapes();
    if want != got.as_slice() {
        return shape_err(format!("filter bank shapes {got:?} do not match network conv shapes {want:?}"));
    }
    Ok(())
}

fn check_input(plan: &Plan, x: &FeatureMaps) -> Result<()> {
    let d = plan.input_dims();
    if x.dims() != (d.channels, d.height, d.width) {
        return shape_err(format!(
            "input is {:?}, network expects {}x{}x{}",
            x.dims(),
            d.channels,
            d.height,
            d.width
        ));
    }
    Ok(())
}

pub fn apply_step(step: &Step, x: &FeatureMaps, bank: &FilterBank) -> Result<FeatureMaps> {
    Ok(match step {
        Step::Conv { bank_layer, patches, .. } => tensor::conv2d(x, &bank.layers[*bank_layer], patches)?,
        Step::Relu => tensor::relu(x),
        Step::LeakyRelu(s) => tensor::leaky_relu(x, *s),
        Step::MaxPool(p) => tensor::max_pool(x, p)?,
        Step::L2Pool(p) => tensor::l2_pool(x, p)?,
        Step::AvgPool(p) => tensor::avg_pool(x, p)?,
        Step::Upsample(f) => tensor::upsample(x, *f)?,
        Step::Crop(h, w) => tensor::crop(x, *h, *w)?,
        Step::ChannelMean => tensor::channel_mean(x),
        Step::Scale(c) => tensor::scale(x, *c),
    })
}

/// Runs a resolved plan; reuse the plan when forwarding many inputs.
pub fn forward_plan(plan: &Plan, bank: &FilterBank, x: &FeatureMaps, retain: bool) -> Result<ForwardTrace> {
    check_bank(plan, bank)?;
    check_input(plan, x)?;
    let mut snapshots = Vec::new();
    let mut cur = x.clone();
    for step in &plan.steps {
        cur = apply_step(step, &cur, bank)?;
        if retain {
            snapshots.push(cur.clone());
        }
    }
    Ok(ForwardTrace { snapshots, output: cur })
}

pub fn forward(spec: &NetworkSpec, bank: &FilterBank, x: &FeatureMaps) -> Result<ForwardTrace> {
    forward_plan(&spec.plan()?, bank, x, false)
}

pub fn forward_retaining(spec: &NetworkSpec, bank: &FilterBank, x: &FeatureMaps) -> Result<ForwardTrace> {
    forward_plan(&spec.plan()?, bank, x, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Leaky(f64),
}

impl Activation {
    fn layer(self) -> LayerSpec {
        match self {
            Activation::Relu => LayerSpec::Relu,
            Activation::Leaky(slope) => LayerSpec::LeakyRelu { slope },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PresetOptions {
    /// Uniform hidden channel count; the output keeps the input's channels.
    pub channels: Option<usize>,
    /// Square kernel size for every conv (padding `kernel / 2`).
    pub kernel: Option<usize>,
    pub activation: Option<Activation>,
}

#[derive(Debug, Clone, Copy)]
enum EncOp {
    Conv { kernel: usize, stride: usize, pad: usize, out: usize },
    Pool { kernel: usize, stride: usize },
}

const VGG_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

pub const PRESET_NAMES: &[&str] = &[
    "vgg16_conv1_deconv1",
    "vgg16_conv2_deconv2",
    "vgg16_conv3_deconv3",
    "vgg16_conv4_deconv4",
    "vgg16_conv5_deconv5",
    "alexnet_conv1_deconv1",
    "alexnet_conv2_deconv2",
    "alexnet_conv3_deconv3",
    "alexnet_conv4_deconv4",
    "alexnet_conv5_deconv5",
    "simplified_conv1",
    "simplified_conv2",
    "simplified_conv3",
    "simplified_conv4",
    "simplified_conv5",
    "rrvgg_conv1_deconv1",
    "rrvgg_conv1_deconv1_variant",
    "rrvgg_conv1_1",
    "rrvgg_conv1_1_variant",
];

fn vgg_encoder(depth: usize, opts: &PresetOptions) -> Vec<EncOp> {
    let k = opts.kernel.unwrap_or(3);
    let mut ops = Vec::new();
    for &(channels, convs) in &VGG_BLOCKS[..depth] {
        for _ in 0..convs {
            ops.push(EncOp::Conv { kernel: k, stride: 1, pad: k / 2, out: opts.channels.unwrap_or(channels) });
        }
        ops.push(EncOp::Pool { kernel: 2, stride: 2 });
    }
    ops
}

fn alexnet_encoder(depth: usize, opts: &PresetOptions) -> Vec<EncOp> {
    // (kernel, stride, pad, channels, pooled)
    const LAYERS: [(usize, usize, usize, usize, bool); 5] = [
        (11, 4, 0, 96, true),
        (5, 1, 2, 256, true),
        (3, 1, 1, 384, false),
        (3, 1, 1, 384, false),
        (3, 1, 1, 256, true),
    ];
    let mut ops = Vec::new();
    for &(kernel, stride, pad, channels, pooled) in &LAYERS[..depth] {
        let (kernel, pad) = match opts.kernel {
            Some(k) => (k, k / 2),
            None => (kernel, pad),
        };
        ops.push(EncOp::Conv { kernel, stride, pad, out: opts.channels.unwrap_or(channels) });
        if pooled {
            ops.push(EncOp::Pool { kernel: 3, stride: 2 });
        }
    }
    ops
}

/// Encoder layers followed by the mirrored decoder: every down-sampling op is
/// undone by an upsample of `ceil(pre / post)`, every conv is mirrored by a
/// stride-1 conv back to the channels it consumed, and a final crop restores
/// the input size. With `variant` the last decoder conv becomes a channel mean.
fn mirror(input: [usize; 3], enc: &[EncOp], act: Activation, variant: bool) -> Result<(NetworkSpec, usize)> {
    let mut layers = Vec::new();
    // (channels, h, w) before each encoder op
    let mut pre = Vec::with_capacity(enc.len());
    let mut cur = input;
    for op in enc {
        pre.push(cur);
        match *op {
            EncOp::Conv { kernel, stride, pad, out } => {
                layers.push(LayerSpec::conv(kernel, stride, pad, out));
                layers.push(act.layer());
                let p = PatchIndex::new(cur[1], cur[2], kernel, stride, pad)?;
                cur = [out, p.out_dims().0, p.out_dims().1];
            }
            EncOp::Pool { kernel, stride } => {
                layers.push(LayerSpec::MaxPool { kernel, stride: Some(stride), pad: 0 });
                let p = PatchIndex::pooling(cur[1], cur[2], kernel, stride, 0)?;
                cur = [cur[0], p.out_dims().0, p.out_dims().1];
            }
        }
    }
    let encoder_len = layers.len();
    let last_conv = enc.iter().position(|op| matches!(op, EncOp::Conv { .. }));
    for (idx, op) in enc.iter().enumerate().rev() {
        let before = pre[idx];
        let (kernel, stride) = match *op {
            EncOp::Conv { kernel, stride, .. } => (Some(kernel), stride),
            EncOp::Pool { stride, .. } => (None, stride),
        };
        if stride > 1 || matches!(op, EncOp::Pool { .. }) {
            let after = if idx + 1 < pre.len() { pre[idx + 1] } else { cur };
            let factor = before[1].div_ceil(after[1]).max(before[2].div_ceil(after[2]));
            if factor > 1 {
                layers.push(LayerSpec::Upsample { factor });
            }
        }
        if let Some(k) = kernel {
            if variant && Some(idx) == last_conv {
                layers.push(LayerSpec::ChannelMean);
            } else {
                layers.push(LayerSpec::conv(k, 1, k / 2, before[0]));
                layers.push(act.layer());
            }
        }
    }
    layers.push(LayerSpec::crop_to_input());
    Ok((NetworkSpec::empirical(input, layers)?, encoder_len))
}

/// Builds a named architecture for the given input dims.
pub fn build_preset(name: &str, input: [usize; 3], opts: &PresetOptions) -> Result<NetworkSpec> {
    preset_parts(name, input, opts).map(|(spec, _)| spec)
}

/// A preset split into its fixed CNN and its DCN. The DCN's input is the
/// CNN's output and its final crop names the image size explicitly.
pub fn build_preset_split(name: &str, input: [usize; 3], opts: &PresetOptions) -> Result<(NetworkSpec, NetworkSpec)> {
    let (spec, encoder_len) = preset_parts(name, input, opts)?;
    split_network(&spec, encoder_len)
}

/// Splits an empirical network after `at` layers. Input-relative crops in the
/// second half are made explicit.
pub fn split_network(spec: &NetworkSpec, at: usize) -> Result<(NetworkSpec, NetworkSpec)> {
    if at == 0 || at >= spec.layers.len() {
        return param_err(format!("split point {at} outside 1..{}", spec.layers.len()));
    }
    let head = NetworkSpec::new(spec.mode, spec.input, spec.layers[..at].to_vec())?;
    let mid = head.output_dims()?;
    let tail_layers = spec.layers[at..]
        .iter()
        .map(|l| match l {
            LayerSpec::Crop { height, width } => LayerSpec::Crop {
                height: Some(height.unwrap_or(spec.input[1])),
                width: Some(width.unwrap_or(spec.input[2])),
            },
            other => other.clone(),
        })
        .collect();
    let tail = NetworkSpec::new(Mode::Empirical, [mid.channels, mid.height, mid.width], tail_layers)?;
    Ok((head, tail))
}

fn preset_parts(name: &str, input: [usize; 3], opts: &PresetOptions) -> Result<(NetworkSpec, usize)> {
    let unknown = || Error::UnknownPreset(name.to_string());
    let depth_of = |rest: &str| -> Result<usize> {
        let d: usize = rest.parse().map_err(|_| unknown())?;
        if (1..=5).contains(&d) {
            Ok(d)
        } else {
            Err(unknown())
        }
    };
    let trained_act = opts.activation.unwrap_or(Activation::Leaky(0.2));
    let random_act = opts.activation.unwrap_or(Activation::Relu);

    if let Some(rest) = name.strip_prefix("vgg16_conv") {
        let (a, b) = rest.split_once("_deconv").ok_or_else(unknown)?;
        if a != b {
            return Err(unknown());
        }
        return mirror(input, &vgg_encoder(depth_of(a)?, opts), trained_act, false);
    }
    if let Some(rest) = name.strip_prefix("alexnet_conv") {
        let (a, b) = rest.split_once("_deconv").ok_or_else(unknown)?;
        if a != b {
            return Err(unknown());
        }
        return mirror(input, &alexnet_encoder(depth_of(a)?, opts), trained_act, false);
    }
    if let Some(rest) = name.strip_prefix("simplified_conv") {
        let depth = depth_of(rest)?;
        let k = opts.kernel.unwrap_or(3);
        let out = opts.channels.unwrap_or(VGG_BLOCKS[depth - 1].0);
        let pool = 1usize << depth;
        let enc = [
            EncOp::Conv { kernel: k, stride: 1, pad: k / 2, out },
            EncOp::Pool { kernel: pool, stride: pool },
        ];
        return mirror(input, &enc, random_act, false);
    }
    match name {
        "rrvgg_conv1_deconv1" | "rrvgg_conv1_deconv1_variant" => {
            mirror(input, &vgg_encoder(1, opts), random_act, name.ends_with("_variant"))
        }
        "rrvgg_conv1_1" | "rrvgg_conv1_1_variant" => {
            let k = opts.kernel.unwrap_or(3);
            let enc = [EncOp::Conv { kernel: k, stride: 1, pad: k / 2, out: opts.channels.unwrap_or(64) }];
            mirror(input, &enc, random_act, name.ends_with("_variant"))
        }
        _ => Err(unknown()),
    }
}
