//! The two-stage network: a U-Net denoising autoencoder whose output feeds an
//! AlexNet-style classifier, both trained through one joint loss.

use std::collections::HashMap;

use nanet_tensor::{Graph, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::morse::NUM_LETTERS;
use crate::{rng, Error, Result};

/// Pixel mean of the rendered glyph images.
pub const INPUT_MEAN: f64 = 0.974;
/// Pixel standard deviation of the rendered glyph images.
pub const INPUT_STD: f64 = 0.15;

fn valid_standardization(mean: f64, std: f64) -> bool {
    mean.is_finite() && std.is_finite() && std > 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub in_channels: usize,
    /// Output channels of each encoder stage; each stage halves the resolution.
    pub stage_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    /// Inputs are standardized as `(x - input_mean) / input_std` before the encoder.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig { stage_channels: vec![32, 64, 128], bottleneck_channels: 256, ..Self::desk() }
    }
}

impl AutoencoderConfig {
    /// Half-width variant used by the CPU desk-scale preset.
    pub fn desk() -> Self {
        AutoencoderConfig {
            in_channels: 1,
            stage_channels: vec![16, 32, 64],
            bottleneck_channels: 128,
            input_mean: INPUT_MEAN,
            input_std: INPUT_STD,
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.stage_channels.is_empty()
            || self.stage_channels.contains(&0)
            || self.bottleneck_channels == 0
            || !valid_standardization(self.input_mean, self.input_std)
        {
            return Err(Error::InvalidConfig(format!("invalid autoencoder config {self:?}")));
        }
        Ok(())
    }
}

/// Six convolutions with kernels 11, 5, 3, 3, 3, 3 and three fully connected
/// layers. Kernel sizes, strides, paddings and pool placement are fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub channels: [usize; 6],
    pub fc_hidden: [usize; 2],
    pub num_classes: usize,
    pub dropout: f64,
    /// Inputs are standardized as `(x - input_mean) / input_std` before conv1.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            in_channels: 1,
            channels: [64, 192, 256, 256, 256, 256],
            fc_hidden: [2048, 2048],
            num_classes: NUM_LETTERS,
            dropout: 0.5,
            input_mean: INPUT_MEAN,
            input_std: 1.0,
        }
    }
}

pub const CONV_KERNELS: [usize; 6] = [11, 5, 3, 3, 3, 3];
const CONV_STRIDES: [usize; 6] = [4, 1, 1, 1, 1, 1];
const CONV_PADS: [usize; 6] = [2, 2, 1, 1, 1, 1];
/// Conv layers (0-based) followed by a 3x3 stride-2 max pool.
const POOL_AFTER: [usize; 3] = [0, 1, 5];
const POOL_KERNEL: usize = 3;
const POOL_STRIDE: usize = 2;
pub const POOLED_GRID: usize = 6;

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.channels.contains(&0)
            || self.fc_hidden.contains(&0)
            || self.num_classes == 0
            || !(0.0..1.0).contains(&self.dropout)
            || !valid_standardization(self.input_mean, self.input_std)
        {
            return Err(Error::InvalidConfig(format!("invalid classifier config {self:?}")));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        self.channels[5] * POOLED_GRID * POOLED_GRID
    }
}

/// Which stages take part in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Autoencoder then classifier, loss = MSE + CE.
    Nanet,
    /// Classifier on the raw input, loss = CE.
    ClassifierOnly,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nanet" => Ok(Mode::Nanet),
            "classifier-only" | "classifier_only" => Ok(Mode::ClassifierOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Linear,
}

/// Shape and role of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: LayerKind,
    pub is_bias: bool,
}

impl ParamSpec {
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.shape[1],
            LayerKind::Conv | LayerKind::ConvTranspose => self.shape[1..].iter().product(),
        }
    }
}

fn layer(specs: &mut Vec<ParamSpec>, name: &str, kind: LayerKind, weight: Vec<usize>, out: usize) {
    specs.push(ParamSpec { name: format!("{name}.weight"), shape: weight, kind, is_bias: false });
    specs.push(ParamSpec { name: format!("{name}.bias"), shape: vec![out], kind, is_bias: true });
}

fn conv(specs: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize) {
    layer(specs, name, LayerKind::Conv, vec![cout, cin, k, k], cout);
}

/// Every learnable tensor of both sub-networks, in a fixed order.
pub fn param_specs(ae: &AutoencoderConfig, cls: &ClassifierConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = ae.in_channels;
    for (i, &c) in ae.stage_channels.iter().enumerate() {
        conv(&mut specs, &format!("ae.enc{i}.conv0"), cin, c, 3);
        conv(&mut specs, &format!("ae.enc{i}.conv1"), c, c, 3);
        cin = c;
    }
    let b = ae.bottleneck_channels;
    conv(&mut specs, "ae.bottleneck.conv0", cin, b, 3);
    conv(&mut specs, "ae.bottleneck.conv1", b, b, 3);
    let mut below = b;
    for (i, &c) in ae.stage_channels.iter().enumerate().rev() {
        layer(&mut specs, &format!("ae.dec{i}.up"), LayerKind::ConvTranspose, vec![below, c, 2, 2], c);
        conv(&mut specs, &format!("ae.dec{i}.conv0"), 2 * c, c, 3);
        conv(&mut specs, &format!("ae.dec{i}.conv1"), c, c, 3);
        below = c;
    }
    conv(&mut specs, "ae.head", below, ae.in_channels, 1);

    let mut cin = cls.in_channels;
    for (i, (&c, &k)) in cls.channels.iter().zip(&CONV_KERNELS).enumerate() {
        conv(&mut specs, &format!("cls.conv{}", i + 1), cin, c, k);
        cin = c;
    }
    let dims = [cls.flat_features(), cls.fc_hidden[0], cls.fc_hidden[1], cls.num_classes];
    for i in 0..3 {
        layer(&mut specs, &format!("cls.fc{}", i + 1), LayerKind::Linear, vec![dims[i + 1], dims[i]], dims[i + 1]);
    }
    specs
}

/// All learnable weights plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct NanetParams {
    pub autoencoder: AutoencoderConfig,
    pub classifier: ClassifierConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl NanetParams {
    /// Kaiming-style uniform weights `U(-b, b)` with `b = sqrt(2 / fan_in)`.
    /// Biases are zero except the autoencoder head, whose sigmoid starts at
    /// the input mean. Each tensor draws from its own seeded stream.
    pub fn init(ae: AutoencoderConfig, cls: ClassifierConfig, seed: u64) -> Result<Self> {
        ae.validate()?;
        cls.validate()?;
        let specs = param_specs(&ae, &cls);
        let tensors = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                if spec.name == "ae.head.bias" {
                    let logit = (ae.input_mean / (1.0 - ae.input_mean)).ln() as f32;
                    return Tensor::full(spec.shape.clone(), logit);
                }
                if spec.is_bias {
                    return Tensor::zeros(spec.shape.clone());
                }
                let bound = (2.0 / spec.fan_in() as f64).sqrt() as f32;
                let mut rng = rng::stream(seed, &[0x1a17, i as u64]);
                let n = spec.shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::new(spec.shape.clone(), data).expect("spec shape")
            })
            .collect();
        Self::from_parts(ae, cls, specs.into_iter().map(|s| s.name).collect(), tensors)
    }

    /// Assemble from named tensors, checking names and shapes against the configs.
    pub fn from_parts(
        ae: AutoencoderConfig,
        cls: ClassifierConfig,
        names: Vec<String>,
        tensors: Vec<Tensor<f32>>,
    ) -> Result<Self> {
        ae.validate()?;
        cls.validate()?;
        let specs = param_specs(&ae, &cls);
        if specs.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::InvalidConfig(format!(
                "architecture has {} tensors, got {} names and {} tensors",
                specs.len(),
                names.len(),
                tensors.len()
            )));
        }
        for ((spec, name), t) in specs.iter().zip(&names).zip(&tensors) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::InvalidConfig(format!(
                    "expected {} {:?}, got {name} {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(NanetParams { autoencoder: ae, classifier: cls, names, tensors, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every tensor on `graph`; `trainable` selects which receive gradients.
    pub fn bind<'a>(&'a self, graph: &mut Graph<'a, f32>, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| if trainable(name) { graph.param(t) } else { graph.frozen(t) })
            .collect();
        Bound { vars, index: self.index.clone() }
    }
}

/// Graph handles of a bound parameter set.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn conv(&self, g: &mut Graph<'_, f32>, x: Var, name: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"));
        let b = self.var(&format!("{name}.bias"));
        Ok(g.conv2d(x, w, b, stride, pad)?)
    }

    fn conv_relu(&self, g: &mut Graph<'_, f32>, x: Var, name: &str, stride: usize, pad: usize) -> Result<Var> {
        let y = self.conv(g, x, name, stride, pad)?;
        Ok(g.relu(y))
    }

    fn linear(&self, g: &mut Graph<'_, f32>, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"));
        let b = self.var(&format!("{name}.bias"));
        Ok(g.linear(x, w, b)?)
    }
}

/// Encoder (two conv+ReLU and a 2x2 max pool per stage), bottleneck, decoder
/// (2x2 stride-2 transposed conv, skip concat, two conv+ReLU), 1x1 conv and
/// sigmoid. Output has the input's shape.
pub fn autoencoder_graph(g: &mut Graph<'_, f32>, p: &Bound, cfg: &AutoencoderConfig, x: Var) -> Result<Var> {
    Ok(autoencoder_nodes(g, p, cfg, x)?.output)
}

pub struct AutoencoderNodes {
    pub output: Var,
    /// Output of the second bottleneck convolution.
    pub bottleneck: Var,
}

/// [`autoencoder_graph`] exposing intermediate nodes.
pub fn autoencoder_nodes(
    g: &mut Graph<'_, f32>,
    p: &Bound,
    cfg: &AutoencoderConfig,
    x: Var,
) -> Result<AutoencoderNodes> {
    let [_, c, h, w] = g.value(x).dims4()?;
    let m = cfg.size_multiple();
    if c != cfg.in_channels || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "autoencoder needs {} channel(s) and spatial dims divisible by {m}, got {c}x{h}x{w}",
            cfg.in_channels
        ))
        .into());
    }
    let mut skips = Vec::with_capacity(cfg.stage_channels.len());
    let mut hcur = standardize(g, x, c, cfg.input_mean, cfg.input_std)?;
    for i in 0..cfg.stage_channels.len() {
        hcur = p.conv_relu(g, hcur, &format!("ae.enc{i}.conv0"), 1, 1)?;
        hcur = p.conv_relu(g, hcur, &format!("ae.enc{i}.conv1"), 1, 1)?;
        skips.push(hcur);
        hcur = g.max_pool2d(hcur, 2, 2)?;
    }
    hcur = p.conv_relu(g, hcur, "ae.bottleneck.conv0", 1, 1)?;
    hcur = p.conv_relu(g, hcur, "ae.bottleneck.conv1", 1, 1)?;
    let bottleneck = hcur;
    for i in (0..cfg.stage_channels.len()).rev() {
        let up_w = p.var(&format!("ae.dec{i}.up.weight"));
        let up_b = p.var(&format!("ae.dec{i}.up.bias"));
        let up = g.conv_transpose2d(hcur, up_w, up_b, 2)?;
        hcur = g.concat_channels(skips[i], up)?;
        hcur = p.conv_relu(g, hcur, &format!("ae.dec{i}.conv0"), 1, 1)?;
        hcur = p.conv_relu(g, hcur, &format!("ae.dec{i}.conv1"), 1, 1)?;
    }
    let out = p.conv(g, hcur, "ae.head", 1, 0)?;
    Ok(AutoencoderNodes { output: g.sigmoid(out), bottleneck })
}

/// Fixed per-pixel affine map `(x - mean) / std`, as a frozen 1x1 convolution.
fn standardize(g: &mut Graph<'_, f32>, x: Var, c: usize, mean: f64, std: f64) -> Result<Var> {
    if mean == 0.0 && std == 1.0 {
        return Ok(x);
    }
    let scale = (1.0 / std) as f32;
    let mut w = vec![0.0f32; c * c];
    for i in 0..c {
        w[i * c + i] = scale;
    }
    let weight = g.constant(Tensor::new(vec![c, c, 1, 1], w)?);
    let bias = g.constant(Tensor::full(vec![c], (-mean / std) as f32));
    Ok(g.conv2d(x, weight, bias, 1, 0)?)
}

pub struct ClassifierNodes {
    pub logits: Var,
    /// ReLU output of the last convolution, before pooling.
    pub features: Var,
}

/// Six conv+ReLU layers with 3x3/2 max pools after conv1, conv2 and conv6,
/// adaptive average pool to 6x6, then fc-ReLU-dropout twice and a final fc.
/// A pool window larger than its feature map shrinks to the map size.
pub fn classifier_graph<R: Rng + ?Sized>(
    g: &mut Graph<'_, f32>,
    p: &Bound,
    cfg: &ClassifierConfig,
    x: Var,
    training: bool,
    rng: &mut R,
) -> Result<ClassifierNodes> {
    let [_, c, _, _] = g.value(x).dims4()?;
    if c != cfg.in_channels {
        return Err(
            TensorError::ShapeMismatch(format!("classifier expects {} channel(s), got {c}", cfg.in_channels)).into()
        );
    }
    let mut hcur = standardize(g, x, c, cfg.input_mean, cfg.input_std)?;
    let mut features = hcur;
    for i in 0..6 {
        hcur = p.conv_relu(g, hcur, &format!("cls.conv{}", i + 1), CONV_STRIDES[i], CONV_PADS[i])?;
        features = hcur;
        if POOL_AFTER.contains(&i) {
            let [_, _, h, w] = g.value(hcur).dims4()?;
            let k = POOL_KERNEL.min(h).min(w);
            hcur = g.max_pool2d(hcur, k, POOL_STRIDE)?;
        }
    }
    hcur = g.adaptive_avg_pool2d(hcur, POOLED_GRID, POOLED_GRID)?;
    hcur = g.flatten(hcur)?;
    for i in 1..=2 {
        hcur = p.linear(g, hcur, &format!("cls.fc{i}"))?;
        hcur = g.relu(hcur);
        hcur = g.dropout(hcur, cfg.dropout, training, rng)?;
    }
    let logits = p.linear(g, hcur, "cls.fc3")?;
    Ok(ClassifierNodes { logits, features })
}

pub struct NanetNodes {
    /// Absent in classifier-only mode.
    pub reconstruction: Option<Var>,
    pub logits: Var,
    pub features: Var,
}

pub fn nanet_graph<R: Rng + ?Sized>(
    g: &mut Graph<'_, f32>,
    p: &Bound,
    params: &NanetParams,
    x: Var,
    mode: Mode,
    training: bool,
    rng: &mut R,
) -> Result<NanetNodes> {
    let (reconstruction, cls_input) = match mode {
        Mode::Nanet => {
            let r = autoencoder_graph(g, p, &params.autoencoder, x)?;
            (Some(r), r)
        }
        Mode::ClassifierOnly => (None, x),
    };
    let nodes = classifier_graph(g, p, &params.classifier, cls_input, training, rng)?;
    Ok(NanetNodes { reconstruction, logits: nodes.logits, features: nodes.features })
}

/// Joint objective: `mse(reconstruction, clean) + ce(logits, labels)`, or CE
/// alone without a reconstruction. Returns `(total, mse, ce)`.
pub fn joint_loss(
    g: &mut Graph<'_, f32>,
    nodes: &NanetNodes,
    clean: Var,
    labels: &[usize],
) -> Result<(Var, Option<Var>, Var)> {
    let ce = g.cross_entropy(nodes.logits, labels)?;
    match nodes.reconstruction {
        Some(r) => {
            let mse = g.mse(r, clean)?;
            Ok((g.add(mse, ce)?, Some(mse), ce))
        }
        None => Ok((ce, None, ce)),
    }
}

impl NanetParams {
    /// Eval-mode autoencoder output for a `[n, 1, h, w]` batch.
    pub fn denoise(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false);
        let x = g.constant(batch.clone());
        let out = autoencoder_graph(&mut g, &p, &self.autoencoder, x)?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode logits `[n, classes]` in the given mode.
    pub fn logits(&self, batch: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false);
        let x = g.constant(batch.clone());
        // dropout is off in eval mode, so the stream is never drawn from
        let mut unused = rng::stream(0, &[]);
        let nodes = nanet_graph(&mut g, &p, self, x, mode, false, &mut unused)?;
        Ok(g.value(nodes.logits).clone())
    }
}
