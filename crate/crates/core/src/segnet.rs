//! Small pix2pix: U-Net generator, patch discriminator and the
//! validation-gated checkpointing training loop.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{adam_step, AdamParams, AdamState, Graph, Tensor, Var};
use crate::raster::Image;
use crate::seed;

/// Which channels the network sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    RgbOnly,
    #[default]
    RgbPlusFlow,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::RgbOnly => 3,
            InputMode::RgbPlusFlow => 6,
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb_only" | "rgb" => Ok(InputMode::RgbOnly),
            "rgb_plus_flow" | "rgb+flow" => Ok(InputMode::RgbPlusFlow),
            other => Err(Error::config("input_mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Stacks an RGB image and (in 6-channel mode) a colorized flow image into a
/// `[1, C, H, W]` tensor, RGB first.
pub fn assemble_input(rgb: &Image<f32>, flow_color: Option<&Image<f32>>, mode: InputMode) -> Result<Tensor> {
    if rgb.channels() != 3 {
        return Err(Error::Shape(format!("rgb image has {} channels", rgb.channels())));
    }
    let (w, h) = rgb.dims();
    let mut data = Vec::with_capacity(mode.channels() * w * h);
    let mut push_planes = |img: &Image<f32>| {
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3));
        }
    };
    push_planes(rgb);
    if mode == InputMode::RgbPlusFlow {
        let flow = flow_color.ok_or_else(|| Error::Shape("6-channel input needs a flow image".into()))?;
        if flow.dims() != rgb.dims() || flow.channels() != 3 {
            return Err(Error::Shape(format!(
                "flow image {:?}x{} does not match rgb {:?}x3",
                flow.dims(),
                flow.channels(),
                rgb.dims()
            )));
        }
        push_planes(flow);
    }
    Tensor::new([1, mode.channels(), h, w], data)
}

/// Inverse of [`assemble_input`]: the RGB image and, for 6 channels, the flow image.
pub fn split_input(t: &Tensor) -> Result<(Image<f32>, Option<Image<f32>>)> {
    let [n, c, h, w] = t.shape();
    if n != 1 || !matches!(c, 3 | 6) {
        return Err(Error::Shape(format!("expected [1, 3|6, H, W], got {:?}", t.shape())));
    }
    let plane = h * w;
    let image = |first: usize| {
        Image::from_fn(w, h, |x, y| {
            let i = y * w + x;
            [0, 1, 2].map(|k| t.data()[(first + k) * plane + i])
        })
    };
    Ok((image(0), (c == 6).then(|| image(3))))
}

/// Mask image as a `[1, 1, H, W]` tensor.
pub fn mask_tensor(mask: &Image<f32>) -> Result<Tensor> {
    if mask.channels() != 1 {
        return Err(Error::Shape(format!("mask has {} channels", mask.channels())));
    }
    Tensor::new([1, 1, mask.height(), mask.width()], mask.data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

/// One convolution layer's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerSpec {
    fn conv(i: usize, o: usize, k: usize, s: usize, p: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
            pad: p,
        }
    }

    fn up(i: usize, o: usize) -> Self {
        Self {
            kind: LayerKind::ConvTranspose,
            in_channels: i,
            out_channels: o,
            kernel: 4,
            stride: 2,
            pad: 1,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [1, self.out_channels, 1, 1]
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    fn apply(&self, g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        match self.kind {
            LayerKind::Conv => g.conv2d(x, w, b, self.stride, self.pad),
            LayerKind::ConvTranspose => g.conv2d_transpose(x, w, b, self.stride, self.pad),
        }
    }
}

/// U-Net generator: stride-2 encoder convs with leaky ReLU, mirrored decoder of
/// transpose convs with ReLU and skip concatenations, one-channel sigmoid head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_channels: usize,
    pub ladder: Vec<usize>,
}

impl GeneratorSpec {
    pub fn new(mode: InputMode) -> Self {
        Self {
            input_channels: mode.channels(),
            ladder: vec![16, 32, 64, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.input_channels, 3 | 6) {
            return Err(Error::config("input_channels", "must be 3 or 6"));
        }
        if self.ladder.is_empty() || self.ladder.contains(&0) {
            return Err(Error::config("ladder", "needs at least one non-zero width"));
        }
        Ok(())
    }

    /// Encoder layers, then decoder layers, then the head.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let l = &self.ladder;
        let mut layers = Vec::with_capacity(2 * l.len());
        let mut prev = self.input_channels;
        for &c in l {
            layers.push(LayerSpec::conv(prev, c, 4, 2, 1));
            prev = c;
        }
        for i in (0..l.len() - 1).rev() {
            let input = if i == l.len() - 2 { l[l.len() - 1] } else { 2 * l[i + 1] };
            layers.push(LayerSpec::up(input, l[i]));
        }
        let head_in = if l.len() == 1 { l[0] } else { 2 * l[0] };
        layers.push(LayerSpec::up(head_in, 1));
        layers
    }

    /// Input sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.ladder.len()
    }
}

/// Patch discriminator over `condition ⊕ mask`, emitting a grid of logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub condition_channels: usize,
    pub ladder: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn new(mode: InputMode) -> Self {
        Self {
            condition_channels: mode.channels(),
            ladder: vec![16, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.condition_channels, 3 | 6) {
            return Err(Error::config("condition_channels", "must be 3 or 6"));
        }
        if self.ladder.is_empty() || self.ladder.contains(&0) {
            return Err(Error::config("ladder", "needs at least one non-zero width"));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(self.ladder.len() + 1);
        let mut prev = self.condition_channels + 1;
        for &c in &self.ladder {
            layers.push(LayerSpec::conv(prev, c, 4, 2, 1));
            prev = c;
        }
        layers.push(LayerSpec::conv(prev, 1, 3, 1, 1));
        layers
    }
}

/// Total parameter count of a layer list.
pub fn param_count(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

/// He-normal weights, zero biases; tensors ordered weight, bias per layer.
fn init_params(layers: &[LayerSpec], seed: u64) -> Vec<Tensor> {
    let mut rng = seed::rng(seed);
    let mut params = Vec::with_capacity(2 * layers.len());
    for l in layers {
        let fan_in = match l.kind {
            LayerKind::Conv => l.in_channels * l.kernel * l.kernel,
            LayerKind::ConvTranspose => (l.in_channels * l.kernel * l.kernel / (l.stride * l.stride)).max(1),
        };
        let std = (2.0 / (1.04 * fan_in as f64)).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let shape = l.weight_shape();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        params.push(Tensor::new(shape, data).expect("sized"));
        params.push(Tensor::zeros(l.bias_shape()));
    }
    params
}

fn check_params(layers: &[LayerSpec], params: &[Tensor]) -> Result<()> {
    if params.len() != 2 * layers.len() {
        return Err(Error::Shape(format!(
            "{} layers need {} tensors, got {}",
            layers.len(),
            2 * layers.len(),
            params.len()
        )));
    }
    for (l, pair) in layers.iter().zip(params.chunks(2)) {
        if pair[0].shape() != l.weight_shape() || pair[1].shape() != l.bias_shape() {
            return Err(Error::Shape(format!(
                "layer {l:?} expects {:?}/{:?}, got {:?}/{:?}",
                l.weight_shape(),
                l.bias_shape(),
                pair[0].shape(),
                pair[1].shape()
            )));
        }
    }
    Ok(())
}

fn bind(g: &mut Graph, params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            if trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: Vec<Tensor>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&spec.layers(), seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: GeneratorSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        check_params(&spec.layers(), &params)?;
        Ok(Self { spec, params })
    }

    /// Records the forward pass; `vars` are the bound parameters.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).shape();
        if c != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {c}",
                self.spec.input_channels
            )));
        }
        let m = self.spec.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not divisible by {m}")));
        }
        let layers = self.spec.layers();
        let depth = self.spec.ladder.len();
        let mut skips = Vec::with_capacity(depth);
        let mut cur = x;
        for (i, l) in layers[..depth].iter().enumerate() {
            let y = l.apply(g, cur, vars[2 * i], vars[2 * i + 1])?;
            cur = g.leaky_relu(y, 0.2);
            skips.push(cur);
        }
        for (j, l) in layers[depth..].iter().enumerate() {
            let idx = depth + j;
            let y = l.apply(g, cur, vars[2 * idx], vars[2 * idx + 1])?;
            if idx == layers.len() - 1 {
                return Ok(g.sigmoid(y));
            }
            let y = g.relu(y);
            let skip = skips[depth - 2 - j];
            cur = g.concat_channels(y, skip)?;
        }
        unreachable!("head layer returns")
    }

    /// Batched inference without gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: Vec<Tensor>,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&spec.layers(), seed);
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: DiscriminatorSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        check_params(&spec.layers(), &params)?;
        Ok(Self { spec, params })
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], condition: Var, mask: Var) -> Result<Var> {
        let mut cur = g.concat_channels(condition, mask)?;
        let layers = self.spec.layers();
        for (i, l) in layers.iter().enumerate() {
            let y = l.apply(g, cur, vars[2 * i], vars[2 * i + 1])?;
            cur = if i + 1 == layers.len() { y } else { g.leaky_relu(y, 0.2) };
        }
        Ok(cur)
    }

    pub fn logits(&self, condition: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = bind(&mut g, &self.params, false);
        let c = g.constant(condition.clone());
        let m = g.constant(mask.clone());
        let out = self.forward(&mut g, &vars, c, m)?;
        Ok(g.value(out).clone())
    }
}

/// Saved network state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub images_seen: u64,
    /// Best validation L1 so far, `None` before the first evaluation.
    pub best_val_loss: Option<f32>,
}

impl Checkpoint {
    pub fn input_channels(&self) -> usize {
        self.generator.spec.input_channels
    }
}

/// Mask probabilities in `(0, 1)` for a single `[1, C, H, W]` input.
pub fn infer(checkpoint: &Checkpoint, input: &Tensor) -> Result<Image<f32>> {
    let [n, c, h, w] = input.shape();
    if n != 1 {
        return Err(Error::Shape(format!("infer takes one sample, got batch {n}")));
    }
    if c != checkpoint.input_channels() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} channels, input has {c}",
            checkpoint.input_channels()
        )));
    }
    let out = checkpoint.generator.predict(input)?;
    Image::from_vec(w, h, 1, out.into_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub lambda_l1: f32,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Budget of sample presentations, repeats across epochs included.
    pub max_images: u64,
    pub val_every: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub input_mode: InputMode,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            max_images: 20_000,
            val_every: 1_000,
            batch_size: 1,
            seed: 0,
            input_mode: InputMode::RgbPlusFlow,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_images < 1 {
            return Err(Error::config("max_images", "must be >= 1"));
        }
        if self.val_every < 1 {
            return Err(Error::config("val_every", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::config("lambda_l1", "must be a finite value >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be > 0"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// One training / evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, C, H, W]`.
    pub input: Tensor,
    /// `[1, 1, H, W]` with values in `{0, 1}`.
    pub target: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub images_seen: u64,
    pub val_l1: f32,
    pub gen_loss: f32,
    pub disc_loss: f32,
    pub saved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<TrainLogEntry>,
}

/// Keeps a checkpoint only when its validation loss beats every earlier one.
#[derive(Clone, Debug, Default)]
pub struct BestTracker {
    best: Option<f32>,
}

impl BestTracker {
    /// Records `loss`; true iff it is strictly lower than the best so far.
    pub fn offer(&mut self, loss: f32) -> bool {
        if loss.is_nan() {
            return false;
        }
        let better = self.best.is_none_or(|b| loss < b);
        if better {
            self.best = Some(loss);
        }
        better
    }

    pub fn best(&self) -> Option<f32> {
        self.best
    }
}

/// Extension points of [`train_with`].
pub trait TrainHooks {
    /// Validation loss for the current generator; mean L1 by default.
    fn validation_loss(&mut self, generator: &Generator, val: &[Sample]) -> Result<f32> {
        validation_l1(generator, val)
    }

    /// Called after every evaluation with the snapshot that was just taken.
    fn on_evaluation(&mut self, _entry: &TrainLogEntry, _snapshot: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

struct DefaultHooks;

impl TrainHooks for DefaultHooks {}

/// Mean per-pixel L1 between generator output and targets over `val`.
pub fn validation_l1(generator: &Generator, val: &[Sample]) -> Result<f32> {
    if val.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in val.chunks(16) {
        let x = Tensor::stack(&chunk.iter().map(|s| &s.input).collect::<Vec<_>>())?;
        let y = Tensor::stack(&chunk.iter().map(|s| &s.target).collect::<Vec<_>>())?;
        let p = generator.predict(&x)?;
        total += p
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| f64::from((a - b).abs()))
            .sum::<f64>();
        count += p.len();
    }
    Ok((total / count as f64) as f32)
}

pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    params: &TrainParams,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, gen_spec, disc_spec, params, &mut DefaultHooks)
}

struct Optimizer {
    hp: AdamParams,
    states: Vec<AdamState>,
}

impl Optimizer {
    fn new(hp: AdamParams, params: &[Tensor]) -> Self {
        Self {
            hp,
            states: params.iter().map(|p| AdamState::new(p.len())).collect(),
        }
    }

    fn step(&mut self, g: &Graph, vars: &[Var], params: &mut [Tensor]) {
        for ((p, v), st) in params.iter_mut().zip(vars).zip(&mut self.states) {
            if let Some(grad) = g.grad(*v) {
                adam_step(p.data_mut(), grad.data(), st, &self.hp);
            }
        }
    }
}

/// Discriminator and generator losses after one alternating step.
pub struct StepLosses {
    pub disc: f32,
    pub gen: f32,
}

/// One alternating update on a batch: the discriminator on real and detached
/// fake pairs, then the generator against the updated discriminator.
fn train_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    gen_opt: &mut Optimizer,
    disc_opt: &mut Optimizer,
    x: &Tensor,
    y: &Tensor,
    lambda_l1: f32,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let gvars = bind(&mut g, &gen.params, true);
    let fake = gen.forward(&mut g, &gvars, xv)?;

    let fake_c = g.detach(fake);
    let dvars = bind(&mut g, &disc.params, true);
    let real_logits = disc.forward(&mut g, &dvars, xv, yv)?;
    let fake_logits = disc.forward(&mut g, &dvars, xv, fake_c)?;
    let shape = g.value(real_logits).shape();
    let ones = g.constant(Tensor::full(shape, 1.0));
    let zeros = g.constant(Tensor::zeros(shape));
    let l_real = g.bce_with_logits(real_logits, ones)?;
    let l_fake = g.bce_with_logits(fake_logits, zeros)?;
    let sum = g.add(l_real, l_fake)?;
    let d_loss = g.scale(sum, 0.5);
    g.backward(d_loss)?;
    disc_opt.step(&g, &dvars, &mut disc.params);
    let disc_loss = g.value(d_loss).item();

    let dvars = bind(&mut g, &disc.params, false);
    let logits = disc.forward(&mut g, &dvars, xv, fake)?;
    let adv = g.bce_with_logits(logits, ones)?;
    let l1 = g.l1_loss(fake, yv)?;
    let l1 = g.scale(l1, lambda_l1);
    let g_loss = g.add(adv, l1)?;
    g.backward(g_loss)?;
    gen_opt.step(&g, &gvars, &mut gen.params);
    Ok(StepLosses {
        disc: disc_loss,
        gen: g.value(g_loss).item(),
    })
}

/// Discriminator loss `½[bce(D(x,y),1) + bce(D(x,G(x)),0)]` on a batch.
pub fn discriminator_loss(gen: &Generator, disc: &Discriminator, x: &Tensor, y: &Tensor) -> Result<f32> {
    let fake = gen.predict(x)?;
    let real = disc.logits(x, y)?;
    let fake = disc.logits(x, &fake)?;
    let bce = |logits: &Tensor, t: f32| {
        logits
            .data()
            .iter()
            .map(|&v| {
                let v = f64::from(v);
                v.max(0.0) - v * f64::from(t) + (-v.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / logits.len() as f64
    };
    Ok((0.5 * (bce(&real, 1.0) + bce(&fake, 0.0))) as f32)
}

/// Single discriminator update (no generator step); used to probe descent.
pub fn discriminator_step(
    gen: &Generator,
    disc: &mut Discriminator,
    x: &Tensor,
    y: &Tensor,
    hp: AdamParams,
) -> Result<()> {
    let mut opt = Optimizer::new(hp, &disc.params);
    let mut g = Graph::new();
    let fake = g.constant(gen.predict(x)?);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let dvars = bind(&mut g, &disc.params, true);
    let real_logits = disc.forward(&mut g, &dvars, xv, yv)?;
    let fake_logits = disc.forward(&mut g, &dvars, xv, fake)?;
    let shape = g.value(real_logits).shape();
    let ones = g.constant(Tensor::full(shape, 1.0));
    let zeros = g.constant(Tensor::zeros(shape));
    let l_real = g.bce_with_logits(real_logits, ones)?;
    let l_fake = g.bce_with_logits(fake_logits, zeros)?;
    let sum = g.add(l_real, l_fake)?;
    let loss = g.scale(sum, 0.5);
    g.backward(loss)?;
    opt.step(&g, &dvars, &mut disc.params);
    Ok(())
}

fn check_dataset(what: &str, set: &[Sample], channels: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Empty(format!("{what} set")));
    }
    for s in set {
        let [n, c, _, _] = s.input.shape();
        if n != 1 || c != channels {
            return Err(Error::Shape(format!(
                "{what} sample `{}` has {c} channels, input mode needs {channels}",
                s.id
            )));
        }
    }
    Ok(())
}

/// Full training run with hooks for validation and checkpoint persistence.
pub fn train_with(
    train_set: &[Sample],
    val_set: &[Sample],
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    params: &TrainParams,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    params.validate()?;
    let channels = params.input_mode.channels();
    if gen_spec.input_channels != channels || disc_spec.condition_channels != channels {
        return Err(Error::Shape(format!(
            "network specs take {}/{} channels but input mode {:?} has {channels}",
            gen_spec.input_channels, disc_spec.condition_channels, params.input_mode
        )));
    }
    check_dataset("training", train_set, channels)?;
    check_dataset("validation", val_set, channels)?;

    let mut gen = Generator::new(gen_spec.clone(), seed::derive(params.seed, seed::stream::INIT, 0))?;
    let mut disc = Discriminator::new(disc_spec.clone(), seed::derive(params.seed, seed::stream::INIT, 1))?;
    let mut gen_opt = Optimizer::new(params.adam(), &gen.params);
    let mut disc_opt = Optimizer::new(params.adam(), &disc.params);

    let mut tracker = BestTracker::default();
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut images_seen = 0u64;
    let mut recent = (0.0f64, 0.0f64, 0usize);

    while images_seen < params.max_images {
        let remaining = (params.max_images - images_seen) as usize;
        let batch_len = params.batch_size.min(remaining);
        let mut batch = Vec::with_capacity(batch_len);
        while batch.len() < batch_len {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut seed::rng(seed::derive(params.seed, seed::stream::SHUFFLE, epoch)));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let x = Tensor::stack(&batch.iter().map(|s| &s.input).collect::<Vec<_>>())?;
        let y = Tensor::stack(&batch.iter().map(|s| &s.target).collect::<Vec<_>>())?;
        let losses = train_step(
            &mut gen,
            &mut disc,
            &mut gen_opt,
            &mut disc_opt,
            &x,
            &y,
            params.lambda_l1,
        )?;
        recent.0 += f64::from(losses.gen);
        recent.1 += f64::from(losses.disc);
        recent.2 += 1;

        let before = images_seen;
        images_seen += batch_len as u64;
        let crossed = images_seen / params.val_every > before / params.val_every;
        if crossed || images_seen == params.max_images && log.is_empty() {
            let val_l1 = hooks.validation_loss(&gen, val_set)?;
            let saved = tracker.offer(val_l1);
            let snapshot = Checkpoint {
                generator: gen.clone(),
                discriminator: disc.clone(),
                images_seen,
                best_val_loss: tracker.best(),
            };
            let steps = recent.2.max(1) as f64;
            let entry = TrainLogEntry {
                images_seen,
                val_l1,
                gen_loss: (recent.0 / steps) as f32,
                disc_loss: (recent.1 / steps) as f32,
                saved,
            };
            recent = (0.0, 0.0, 0);
            hooks.on_evaluation(&entry, &snapshot)?;
            if saved {
                best = Some(snapshot);
            }
            log.push(entry);
        }
    }

    let last = Checkpoint {
        generator: gen,
        discriminator: disc,
        images_seen,
        best_val_loss: tracker.best(),
    };
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, log })
}
