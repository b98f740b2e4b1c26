use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Tensor};
use crate::seed::{derive_seed, rng_from_seed};
use crate::NUM_CLASSES;

/// Lower clamp on the true-class probability inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub filters: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

/// Conv blocks (3x3 conv, padding 1, ReLU, 2x2 max-pool), global average
/// pooling, then dense layers; the last dense layer has one unit per class
/// and feeds a softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactNetConfig {
    /// `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Hidden dense widths (ReLU) between pooling and the output layer.
    #[serde(default)]
    pub dense_hidden: Vec<usize>,
    /// Names of layers created frozen.
    #[serde(default)]
    pub frozen: Vec<String>,
}

impl CompactNetConfig {
    /// The network used for 64x64 RGB inputs.
    pub fn desk_scale(height: usize, width: usize) -> Self {
        Self {
            input: (3, height, width),
            conv_blocks: vec![
                ConvBlockConfig { filters: 8, stride: 2 },
                ConvBlockConfig { filters: 16, stride: 1 },
                ConvBlockConfig { filters: 32, stride: 1 },
            ],
            dense_hidden: vec![32],
            frozen: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvBlock { stride: usize },
    GlobalAvgPool,
    Dense { relu: bool },
}

/// One layer. `weight` is `[out, in, 3, 3]` for conv blocks and
/// `[out, in]` for dense layers; pooling layers hold empty tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Tensor,
    pub trainable: bool,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        !self.weight.is_empty()
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Image { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Shape::Vector(n) => write!(f, "{n}"),
        }
    }
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    input: (usize, usize, usize),
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Per-layer gradient buffers; `None` for frozen or parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|(w, b)| w.iter().chain(b))
            .fold(0.0, |m: f64, g| if g.is_nan() || m.is_nan() { f64::NAN } else { m.max(g.abs()) })
    }

    pub fn get(&self, layer: usize, kind: ParamKind, index: usize) -> Option<f64> {
        let (w, b) = self.layers.get(layer)?.as_ref()?;
        match kind {
            ParamKind::Weight => w.get(index).copied(),
            ParamKind::Bias => b.get(index).copied(),
        }
    }
}

enum Cache {
    Conv {
        input: Vec<f64>,
        in_shape: (usize, usize, usize),
        pre: Vec<f64>,
        conv_shape: (usize, usize, usize),
        argmax: Vec<usize>,
    },
    Gap {
        in_shape: (usize, usize, usize),
    },
    Dense {
        input: Vec<f64>,
        pre: Vec<f64>,
    },
}

fn softmax(logits: &[f64]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Cross-entropy of one probability row against its class index.
pub fn sample_loss(probs: &[f64; NUM_CLASSES], label: usize) -> f64 {
    -probs[label].clamp(PROB_FLOOR, 1.0).ln()
}

/// Mean cross-entropy over rows.
pub fn loss(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> f64 {
    let total: f64 = probs.iter().zip(labels).map(|(p, &l)| sample_loss(p, l)).sum();
    total / probs.len().max(1) as f64
}

impl Net {
    /// Builds a network with fan-in-scaled uniform weights and zero biases.
    pub fn new(cfg: &CompactNetConfig, seed: u64) -> Result<Self, ModelError> {
        let (c, h, w) = cfg.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::InvalidConfig("input dimensions must be nonzero".into()));
        }
        let mut rng = rng_from_seed(derive_seed(seed, &["init".into()]));
        let mut layers = Vec::new();
        let mut shape = (c, h, w);
        for (i, block) in cfg.conv_blocks.iter().enumerate() {
            let name = format!("conv{}", i + 1);
            if block.filters == 0 || block.stride == 0 {
                return Err(ModelError::InvalidConfig(format!("{name}: filters and stride must be nonzero")));
            }
            let (oh, ow) = (conv_out(shape.1, block.stride), conv_out(shape.2, block.stride));
            if oh < 2 || ow < 2 {
                return Err(ModelError::InvalidConfig(format!(
                    "{name}: {}x{} input is too small to convolve and pool",
                    shape.1, shape.2
                )));
            }
            let fan_in = shape.0 * 9;
            let limit = (6.0 / fan_in as f64).sqrt();
            let weight = uniform(&mut rng, vec![block.filters, shape.0, 3, 3], limit);
            layers.push(Layer {
                name,
                kind: LayerKind::ConvBlock { stride: block.stride },
                weight,
                bias: Tensor::zeros(vec![block.filters]),
                trainable: true,
            });
            shape = (block.filters, oh / 2, ow / 2);
        }
        let mut width = shape.0;
        if !cfg.conv_blocks.is_empty() || h * w > 1 {
            layers.push(Layer {
                name: "gap".into(),
                kind: LayerKind::GlobalAvgPool,
                weight: Tensor::empty(),
                bias: Tensor::empty(),
                trainable: true,
            });
        } else {
            width = c;
        }
        let widths: Vec<usize> = cfg.dense_hidden.iter().copied().chain([NUM_CLASSES]).collect();
        for (i, &out) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            if out == 0 {
                return Err(ModelError::InvalidConfig("dense widths must be nonzero".into()));
            }
            let limit = if last { (3.0 / width as f64).sqrt() } else { (6.0 / width as f64).sqrt() };
            layers.push(Layer {
                name: if last { "logits".into() } else { format!("dense{}", i + 1) },
                kind: LayerKind::Dense { relu: !last },
                weight: uniform(&mut rng, vec![out, width], limit),
                bias: Tensor::zeros(vec![out]),
                trainable: true,
            });
            width = out;
        }
        let mut net = Self { input: cfg.input, layers };
        for name in &cfg.frozen {
            net.set_trainable(name, false)?;
        }
        Ok(net)
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(input: (usize, usize, usize), layers: Vec<Layer>) -> Result<Self, ModelError> {
        let net = Self { input, layers };
        let mut shape = Shape::Image {
            c: input.0,
            h: input.1,
            w: input.2,
        };
        for l in &net.layers {
            shape = net.layer_output(l, shape)?;
        }
        if shape != Shape::Vector(NUM_CLASSES) {
            return Err(ModelError::InvalidConfig(format!(
                "network output is {shape}, expected {NUM_CLASSES} units"
            )));
        }
        Ok(net)
    }

    fn layer_output(&self, l: &Layer, shape: Shape) -> Result<Shape, ModelError> {
        let mismatch = |expected: String| ModelError::ShapeMismatch {
            layer: l.name.clone(),
            expected,
            got: shape.to_string(),
        };
        match (l.kind, shape) {
            (LayerKind::ConvBlock { stride }, Shape::Image { c, h, w }) => {
                let ws = l.weight.shape();
                if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 || l.bias.len() != ws[0] {
                    return Err(mismatch(format!("{} input channels", ws.get(1).unwrap_or(&0))));
                }
                let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
                if oh < 2 || ow < 2 || stride == 0 {
                    return Err(mismatch("an input large enough to pool".into()));
                }
                Ok(Shape::Image {
                    c: ws[0],
                    h: oh / 2,
                    w: ow / 2,
                })
            }
            (LayerKind::GlobalAvgPool, Shape::Image { c, .. }) => Ok(Shape::Vector(c)),
            (LayerKind::Dense { .. }, s) => {
                let ws = l.weight.shape();
                if ws.len() != 2 || ws[1] != s.len() || l.bias.len() != ws[0] {
                    return Err(mismatch(format!("{} inputs", ws.get(1).unwrap_or(&0))));
                }
                Ok(Shape::Vector(ws[0]))
            }
            (LayerKind::ConvBlock { .. }, s) | (LayerKind::GlobalAvgPool, s) => {
                Err(mismatch(format!("an image, not a {s}-vector")))
            }
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn layer_index(&self, name: &str) -> Result<usize, ModelError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownLayer(name.to_string()))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), ModelError> {
        let i = self.layer_index(name)?;
        self.layers[i].trainable = trainable;
        Ok(())
    }

    /// Freezes every conv block, leaving the dense head trainable.
    pub fn freeze_features(&mut self) {
        for l in &mut self.layers {
            if matches!(l.kind, LayerKind::ConvBlock { .. }) {
                l.trainable = false;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.layers.iter_mut().for_each(|l| l.trainable = trainable);
    }

    /// Sets the output layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn param(&self, layer: usize, kind: ParamKind, index: usize) -> f32 {
        let l = &self.layers[layer];
        match kind {
            ParamKind::Weight => l.weight.data()[index],
            ParamKind::Bias => l.bias.data()[index],
        }
    }

    pub fn set_param(&mut self, layer: usize, kind: ParamKind, index: usize, value: f32) {
        let l = &mut self.layers[layer];
        match kind {
            ParamKind::Weight => l.weight.data_mut()[index] = value,
            ParamKind::Bias => l.bias.data_mut()[index] = value,
        }
    }

    fn check_input(&self, input: &[f32]) -> Result<(), ModelError> {
        if input.len() != self.input_len() {
            let (c, h, w) = self.input;
            return Err(ModelError::ShapeMismatch {
                layer: self
                    .layers
                    .first()
                    .map(|l| l.name.clone())
                    .unwrap_or_else(|| "input".into()),
                expected: format!("{c}x{h}x{w} ({} values)", c * h * w),
                got: format!("{} values", input.len()),
            });
        }
        Ok(())
    }

    fn run(&self, input: &[f32], mut caches: Option<&mut Vec<Cache>>) -> Result<[f64; NUM_CLASSES], ModelError> {
        self.check_input(input)?;
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let mut shape = Shape::Image {
            c: self.input.0,
            h: self.input.1,
            w: self.input.2,
        };
        for l in &self.layers {
            let next = self.layer_output(l, shape)?;
            let (y, cache) = match (l.kind, shape) {
                (LayerKind::ConvBlock { stride }, Shape::Image { c, h, w }) => {
                    let oc = l.weight.shape()[0];
                    let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
                    let pre = conv_forward(&x, (c, h, w), l.weight.data(), l.bias.data(), oc, stride);
                    let (pooled, argmax) = relu_pool(&pre, (oc, oh, ow));
                    let cache = caches.is_some().then(|| Cache::Conv {
                        input: std::mem::take(&mut x),
                        in_shape: (c, h, w),
                        pre,
                        conv_shape: (oc, oh, ow),
                        argmax,
                    });
                    (pooled, cache)
                }
                (LayerKind::GlobalAvgPool, Shape::Image { c, h, w }) => {
                    let n = (h * w) as f64;
                    let y = (0..c).map(|k| x[k * h * w..(k + 1) * h * w].iter().sum::<f64>() / n).collect();
                    (y, caches.is_some().then_some(Cache::Gap { in_shape: (c, h, w) }))
                }
                (LayerKind::Dense { relu }, _) => {
                    let out = l.weight.shape()[0];
                    let wts = l.weight.data();
                    let inp = x.len();
                    let mut pre = vec![0.0; out];
                    for (o, p) in pre.iter_mut().enumerate() {
                        let row = &wts[o * inp..(o + 1) * inp];
                        *p = l.bias.data()[o] as f64 + row.iter().zip(&x).map(|(&w, &v)| w as f64 * v).sum::<f64>();
                    }
                    let y = if relu { pre.iter().map(|&v| v.max(0.0)).collect() } else { pre.clone() };
                    let cache = caches.is_some().then(|| Cache::Dense {
                        input: std::mem::take(&mut x),
                        pre,
                    });
                    (y, cache)
                }
                _ => unreachable!("layer_output validated the pairing"),
            };
            if let (Some(cs), Some(c)) = (caches.as_deref_mut(), cache) {
                cs.push(c);
            }
            x = y;
            shape = next;
        }
        Ok(softmax(&x))
    }

    /// Class probabilities for one input in CHW layout.
    pub fn forward_one(&self, input: &[f32]) -> Result<[f64; NUM_CLASSES], ModelError> {
        self.run(input, None)
    }

    /// Probability matrix for a batch shaped `[N, C, H, W]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Vec<[f64; NUM_CLASSES]>, ModelError> {
        let (c, h, w) = self.input;
        if batch.shape().len() != 4 || batch.shape()[1..] != [c, h, w] {
            return Err(ModelError::ShapeMismatch {
                layer: self.layers.first().map(|l| l.name.clone()).unwrap_or_default(),
                expected: format!("[N, {c}, {h}, {w}]"),
                got: format!("{:?}", batch.shape()),
            });
        }
        (0..batch.shape()[0]).map(|i| self.forward_one(batch.outer(i))).collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (l.trainable && l.has_params()).then(|| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                })
                .collect(),
        }
    }

    /// Forward and backward for one sample; adds `scale * dLoss/dParam`
    /// into `grads`. Returns the unscaled loss and the probabilities.
    pub fn accumulate(
        &self,
        input: &[f32],
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<(f64, [f64; NUM_CLASSES]), ModelError> {
        if label >= NUM_CLASSES {
            return Err(ModelError::InvalidLabel(label));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let probs = self.run(input, Some(&mut caches))?;
        let loss = sample_loss(&probs, label);
        let Some(lowest) = self.layers.iter().position(|l| l.trainable && l.has_params()) else {
            return Ok((loss, probs));
        };
        let mut d: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, &p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();
        for (i, (l, cache)) in self.layers.iter().zip(&caches).enumerate().rev() {
            if i < lowest {
                break;
            }
            let need_input_grad = i > lowest;
            let g = grads.layers[i].as_mut();
            d = match (l.kind, cache) {
                (LayerKind::Dense { relu }, Cache::Dense { input, pre }) => {
                    if relu {
                        d.iter_mut().zip(pre).for_each(|(g, &p)| {
                            if p <= 0.0 {
                                *g = 0.0
                            }
                        });
                    }
                    let inp = input.len();
                    if let Some((gw, gb)) = g {
                        for (o, &dv) in d.iter().enumerate() {
                            gb[o] += dv;
                            if dv != 0.0 {
                                for (gwi, &xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(input) {
                                    *gwi += dv * xv;
                                }
                            }
                        }
                    }
                    if need_input_grad {
                        let wts = l.weight.data();
                        let mut dx = vec![0.0; inp];
                        for (o, &dv) in d.iter().enumerate() {
                            if dv != 0.0 {
                                for (dxi, &w) in dx.iter_mut().zip(&wts[o * inp..(o + 1) * inp]) {
                                    *dxi += dv * w as f64;
                                }
                            }
                        }
                        dx
                    } else {
                        Vec::new()
                    }
                }
                (LayerKind::GlobalAvgPool, Cache::Gap { in_shape: (c, h, w) }) => {
                    let n = h * w;
                    let mut dx = vec![0.0; c * n];
                    for k in 0..*c {
                        let v = d[k] / n as f64;
                        dx[k * n..(k + 1) * n].fill(v);
                    }
                    dx
                }
                (
                    LayerKind::ConvBlock { stride },
                    Cache::Conv {
                        input,
                        in_shape,
                        pre,
                        conv_shape,
                        argmax,
                    },
                ) => {
                    let mut dpre = vec![0.0; pre.len()];
                    for (&src, &dv) in argmax.iter().zip(&d) {
                        if pre[src] > 0.0 {
                            dpre[src] += dv;
                        }
                    }
                    conv_backward(
                        input,
                        *in_shape,
                        l.weight.data(),
                        &dpre,
                        *conv_shape,
                        stride,
                        g,
                        need_input_grad,
                    )
                }
                _ => unreachable!("cache kinds follow layer kinds"),
            };
        }
        Ok((loss, probs))
    }

    /// Mean loss and gradients over a batch.
    pub fn loss_and_gradients(&self, inputs: &[&[f32]], labels: &[usize]) -> Result<(f64, Gradients), ModelError> {
        let mut grads = self.zero_gradients();
        let scale = 1.0 / inputs.len().max(1) as f64;
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            total += self.accumulate(x, y, scale, &mut grads)?.0;
        }
        Ok((total * scale, grads))
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit) as f32).collect();
    Tensor::new(shape, data).expect("count matches shape")
}

/// Valid output range along one axis for kernel offset `k` (0..3) with
/// padding 1: output indices `o` with `0 <= o*stride + k - 1 < n_in`.
fn valid_range(k: usize, stride: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi = if n_in + 1 > k { ((n_in + 1 - k - 1) / stride + 1).min(n_out) } else { 0 };
    lo..hi.max(lo)
}

fn conv_forward(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    oc: usize,
    stride: usize,
) -> Vec<f64> {
    let (oh, ow) = (conv_out(h, stride), conv_out(w, stride));
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o] as f64);
        for i in 0..c {
            let src = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                let rows = valid_range(ky, stride, h, oh);
                for kx in 0..3 {
                    let wv = weight[((o * c + i) * 3 + ky) * 3 + kx] as f64;
                    let cols = valid_range(kx, stride, w, ow);
                    for oy in rows.clone() {
                        let srow = &src[(oy * stride + ky - 1) * w..];
                        let drow = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in cols.clone() {
                            drow[ox] += wv * srow[ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    dout: &[f64],
    (oc, oh, ow): (usize, usize, usize),
    stride: usize,
    grads: Option<&mut (Vec<f64>, Vec<f64>)>,
    need_input_grad: bool,
) -> Vec<f64> {
    let mut dx = if need_input_grad { vec![0.0; c * h * w] } else { Vec::new() };
    let mut grads = grads;
    for o in 0..oc {
        let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
        if let Some((_, gb)) = grads.as_deref_mut() {
            gb[o] += dplane.iter().sum::<f64>();
        }
        for i in 0..c {
            let src = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..3 {
                let rows = valid_range(ky, stride, h, oh);
                for kx in 0..3 {
                    let widx = ((o * c + i) * 3 + ky) * 3 + kx;
                    let cols = valid_range(kx, stride, w, ow);
                    if let Some((gw, _)) = grads.as_deref_mut() {
                        let mut acc = 0.0;
                        for oy in rows.clone() {
                            let srow = &src[(oy * stride + ky - 1) * w..];
                            let drow = &dplane[oy * ow..];
                            for ox in cols.clone() {
                                acc += drow[ox] * srow[ox * stride + kx - 1];
                            }
                        }
                        gw[widx] += acc;
                    }
                    if need_input_grad {
                        let wv = weight[widx] as f64;
                        let dsrc = &mut dx[i * h * w..(i + 1) * h * w];
                        for oy in rows.clone() {
                            let base = (oy * stride + ky - 1) * w;
                            for ox in cols.clone() {
                                dsrc[base + ox * stride + kx - 1] += wv * dplane[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// ReLU then 2x2 max-pool (floor). Returns pooled values and, for each,
/// the flat index of the pre-activation it came from.
fn relu_pool(pre: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut idx = Vec::with_capacity(c * ph * pw);
    for k in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let mut best = k * h * w + 2 * py * w + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = k * h * w + (2 * py + dy) * w + 2 * px + dx;
                    if pre[j] > pre[best] {
                        best = j;
                    }
                }
                out.push(pre[best].max(0.0));
                idx.push(best);
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f32>()).collect()
    }

    fn small(seed: u64) -> (CompactNetConfig, Net) {
        let cfg = CompactNetConfig {
            input: (2, 9, 7),
            conv_blocks: vec![ConvBlockConfig { filters: 3, stride: 1 }, ConvBlockConfig { filters: 4, stride: 2 }],
            dense_hidden: vec![6],
            frozen: vec![],
        };
        let mut net = Net::new(&cfg, seed).unwrap();
        // Nonzero biases so the oracle exercises them.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for l in &mut net.layers {
            for b in l.bias.data_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        (cfg, net)
    }

    /// Direct evaluation with an explicitly zero-padded input.
    fn oracle(net: &Net, input: &[f32]) -> Vec<f64> {
        let (mut c, mut h, mut w) = net.input_shape();
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        for l in &net.layers {
            match l.kind {
                LayerKind::ConvBlock { stride } => {
                    let oc = l.weight.shape()[0];
                    let mut padded = vec![vec![vec![0.0; w + 2]; h + 2]; c];
                    for ci in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                padded[ci][y + 1][xx + 1] = x[(ci * h + y) * w + xx];
                            }
                        }
                    }
                    let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
                    let mut conv = vec![vec![vec![0.0; ow]; oh]; oc];
                    for o in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut s = l.bias.data()[o] as f64;
                                for ci in 0..c {
                                    for ky in 0..3 {
                                        for kx in 0..3 {
                                            let wv = l.weight.data()[((o * c + ci) * 3 + ky) * 3 + kx] as f64;
                                            s += wv * padded[ci][y * stride + ky][xx * stride + kx];
                                        }
                                    }
                                }
                                conv[o][y][xx] = s.max(0.0);
                            }
                        }
                    }
                    let (ph, pw) = (oh / 2, ow / 2);
                    x = Vec::new();
                    for o in 0..oc {
                        for y in 0..ph {
                            for xx in 0..pw {
                                let m = [
                                    conv[o][2 * y][2 * xx],
                                    conv[o][2 * y][2 * xx + 1],
                                    conv[o][2 * y + 1][2 * xx],
                                    conv[o][2 * y + 1][2 * xx + 1],
                                ];
                                x.push(m.iter().cloned().fold(f64::MIN, f64::max));
                            }
                        }
                    }
                    (c, h, w) = (oc, ph, pw);
                }
                LayerKind::GlobalAvgPool => {
                    x = (0..c)
                        .map(|ci| x[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                        .collect();
                }
                LayerKind::Dense { relu } => {
                    let out = l.weight.shape()[0];
                    x = (0..out)
                        .map(|o| {
                            let mut s = l.bias.data()[o] as f64;
                            for (i, v) in x.iter().enumerate() {
                                s += l.weight.data()[o * x.len() + i] as f64 * v;
                            }
                            if relu {
                                s.max(0.0)
                            } else {
                                s
                            }
                        })
                        .collect();
                }
            }
        }
        let m = x.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn matches_direct_convolution_oracle() {
        for seed in 0..5 {
            let (_, net) = small(seed);
            let x = random_input(net.input_len(), 100 + seed);
            let got = net.forward_one(&x).unwrap();
            let want = oracle(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-5, "{got:?} vs {want:?}");
            }
        }
        let net = Net::new(&CompactNetConfig::desk_scale(64, 64), 3).unwrap();
        let x = random_input(net.input_len(), 7);
        let got = net.forward_one(&x).unwrap();
        for (g, w) in got.iter().zip(oracle(&net, &x)) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_output_layer_gives_uniform_rows() {
        let (_, mut net) = small(1);
        net.zero_output_layer();
        let p = net.forward_one(&random_input(net.input_len(), 1)).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn batch_rows_do_not_depend_on_batch() {
        let (_, net) = small(2);
        let items: Vec<Vec<f32>> = (0..32).map(|i| random_input(net.input_len(), i)).collect();
        let refs: Vec<&[f32]> = items.iter().map(Vec::as_slice).collect();
        let batch = Tensor::stack(&[2, 9, 7], &refs).unwrap();
        let rows = net.forward(&batch).unwrap();
        let single = Tensor::stack(&[2, 9, 7], &refs[5..6]).unwrap();
        let one = net.forward(&single).unwrap();
        for (a, b) in rows[5].iter().zip(&one[0]) {
            assert!((a - b).abs() < 1e-6);
        }
        for r in &rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let (_, net) = small(3);
        let err = net.forward_one(&[0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("conv1"), "{err}");
        let bad = Tensor::zeros(vec![1, 3, 9, 7]);
        assert!(net.forward(&bad).is_err());
        let mut layers = net.layers.clone();
        layers.remove(1);
        let err = Net::from_layers((2, 9, 7), layers).unwrap_err();
        assert!(err.to_string().contains("gap") || err.to_string().contains("dense"), "{err}");
    }

    #[test]
    fn frozen_layers_get_no_gradient_entries() {
        let (_, mut net) = small(4);
        net.freeze_features();
        let x = random_input(net.input_len(), 4);
        let (_, g) = net.loss_and_gradients(&[&x], &[2]).unwrap();
        assert!(g.layers[0].is_none() && g.layers[1].is_none());
        assert!(g.layers[2].is_none(), "gap has no parameters");
        assert!(g.layers[3].is_some() && g.layers[4].is_some());
        net.set_all_trainable(false);
        let (_, g) = net.loss_and_gradients(&[&x], &[2]).unwrap();
        assert!(g.layers.iter().all(Option::is_none));
    }

    fn central_difference(net: &mut Net, inputs: &[&[f32]], labels: &[usize], at: (usize, ParamKind, usize)) -> f64 {
        let (l, kind, i) = at;
        let theta = net.param(l, kind, i);
        let h = 1e-4 * (theta.abs() as f64).max(1.0);
        let plus = (theta as f64 + h) as f32;
        let minus = (theta as f64 - h) as f32;
        net.set_param(l, kind, i, plus);
        let lp = net.loss_and_gradients(inputs, labels).unwrap().0;
        net.set_param(l, kind, i, minus);
        let lm = net.loss_and_gradients(inputs, labels).unwrap().0;
        net.set_param(l, kind, i, theta);
        (lp - lm) / (plus as f64 - minus as f64)
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let archs = [
            (small(11).0, 11u64),
            (
                CompactNetConfig {
                    input: (3, 8, 8),
                    conv_blocks: vec![ConvBlockConfig { filters: 4, stride: 2 }],
                    dense_hidden: vec![],
                    frozen: vec![],
                },
                12,
            ),
            (
                CompactNetConfig {
                    input: (1, 12, 10),
                    conv_blocks: vec![ConvBlockConfig { filters: 2, stride: 1 }, ConvBlockConfig { filters: 3, stride: 1 }],
                    dense_hidden: vec![5, 4],
                    frozen: vec![],
                },
                13,
            ),
        ];
        for (cfg, seed) in archs {
            let mut net = Net::new(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec<f32>> = (0..3).map(|k| random_input(net.input_len(), seed * 10 + k)).collect();
            let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
            let labels = [0, 3, 4];
            let (_, grads) = net.loss_and_gradients(&refs, &labels).unwrap();
            let with_params: Vec<usize> = (0..net.layers.len()).filter(|&i| net.layers[i].has_params()).collect();
            for _ in 0..5 {
                let l = with_params[rng.random_range(0..with_params.len())];
                let kind = if rng.random_bool(0.7) { ParamKind::Weight } else { ParamKind::Bias };
                let n = match kind {
                    ParamKind::Weight => net.layers[l].weight.len(),
                    ParamKind::Bias => net.layers[l].bias.len(),
                };
                let i = rng.random_range(0..n);
                let g = grads.get(l, kind, i).unwrap();
                let fd = central_difference(&mut net, &refs, &labels, (l, kind, i));
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1.0);
                assert!(rel <= 1e-3, "{} {kind:?}[{i}]: analytic {g}, numeric {fd}", net.layers[l].name);
            }
        }
    }

    #[test]
    fn loss_clamps_probabilities() {
        let p = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(loss(&[p], &[0]), 0.0);
        assert!((loss(&[p], &[1]) - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_for_extreme_logits() {
        for logits in [[1e3, -1e3, 0.0, 5.0, 5.0], [-800.0; 5], [0.0; 5]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_range_matches_bounds_check() {
        for n_in in 1..12 {
            for stride in 1..4 {
                let n_out = conv_out(n_in, stride);
                for k in 0..3 {
                    let want: Vec<usize> = (0..n_out)
                        .filter(|&o| {
                            let i = (o * stride + k) as isize - 1;
                            i >= 0 && (i as usize) < n_in
                        })
                        .collect();
                    let got: Vec<usize> = valid_range(k, stride, n_in, n_out).collect();
                    assert_eq!(got, want, "n_in {n_in} stride {stride} k {k}");
                }
            }
        }
    }
}
