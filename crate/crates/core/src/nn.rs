//! Dense feedforward networks: storage, forward pass with activation
//! capture, cross-entropy loss and gradients, and mini-batch SGD.
//!
//! Every operation is a pure function of its inputs plus an explicit seed.
//! Reductions over frames run in dataset order so results are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::mask::PruneMask;

/// Posteriors are clamped to at least this value before taking logs.
pub const POSTERIOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    pub fn apply(self, pre: &[f64], out: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (o, &z) in out.iter_mut().zip(pre) {
                    *o = if z > 0.0 { z } else { 0.0 };
                }
            }
            Activation::Sigmoid => {
                for (o, &z) in out.iter_mut().zip(pre) {
                    *o = 1.0 / (1.0 + (-z).exp());
                }
            }
            Activation::Identity => out.copy_from_slice(pre),
            Activation::Softmax => softmax(pre, out),
        }
    }

    /// Elementwise derivative expressed through pre- and post-activation values.
    /// Not defined for softmax, which is only used as the output layer.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
            Activation::Softmax => unreachable!("softmax is restricted to the output layer"),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One affine component followed by an activation. Weights are `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch(format!(
                "bias of length {} for {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bias".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn affine_into(&self, x: &[f64], pre: &mut [f64]) {
        for (r, (p, &b)) in pre.iter_mut().zip(&self.bias).enumerate() {
            *p = dot(self.weights.row(r), x) + b;
        }
    }
}

/// Feedforward network of [`Layer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Validates chaining of layer dimensions and that softmax only appears last.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        let mut expected = self.input_dim;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "layer {k} takes {} inputs, previous layer gives {expected}",
                    layer.in_dim()
                )));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch(format!("layer {k} bias length")));
            }
            if layer.activation == Activation::Softmax && k != last {
                return Err(Error::InvalidConfig(format!(
                    "softmax on hidden layer {k}; only the final layer may use it"
                )));
            }
            expected = layer.out_dim();
        }
        Ok(())
    }

    /// Randomly initialized network with layer sizes `dims` (input first).
    ///
    /// Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes {dims:?} need an input and an output, all positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let activation = if k + 2 == dims.len() { output } else { hidden };
            layers.push(Layer::new(
                Matrix::new(fan_out, fan_in, data)?,
                vec![0.0; fan_out],
                activation,
            )?);
        }
        Self::new(dims[0], layers)
    }

    /// ReLU hidden layers with a softmax output.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<Self> {
        Self::init(dims, Activation::Relu, Activation::Softmax, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for in-place weight edits. Shapes must not change.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.shape()).collect()
    }

    /// Total weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for a network expecting {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass recording every layer's affine output and activation.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut post_activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post_activations.last().map_or(x, Vec::as_slice);
            let mut pre = vec![0.0; layer.out_dim()];
            layer.affine_into(input, &mut pre);
            let mut post = vec![0.0; layer.out_dim()];
            layer.activation.apply(&pre, &mut post);
            pre_activations.push(pre);
            post_activations.push(post);
        }
        Ok(ForwardTrace {
            pre_activations,
            post_activations,
        })
    }

    /// Network output for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = Workspace::new(self);
        ws.forward(self, x);
        Ok(ws.output().to_vec())
    }
}

/// Parameter count of a fully connected `input → hidden × depth → output` network.
pub fn mlp_param_count(input_dim: usize, output_dim: usize, hidden: usize, depth: usize) -> usize {
    if depth == 0 {
        return input_dim * output_dim + output_dim;
    }
    (input_dim * hidden + hidden) + (depth - 1) * (hidden * hidden + hidden) + (hidden * output_dim + output_dim)
}

/// Largest hidden width whose [`mlp_param_count`] does not exceed `budget`.
pub fn width_for_param_budget(input_dim: usize, output_dim: usize, depth: usize, budget: usize) -> Option<usize> {
    if depth == 0 || mlp_param_count(input_dim, output_dim, 1, depth) > budget {
        return None;
    }
    let mut width = 1;
    while mlp_param_count(input_dim, output_dim, width + 1, depth) <= budget {
        width += 1;
    }
    Some(width)
}

/// Per-layer pre-activations (affine outputs) and post-activations for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post_activations.last().map_or(&[], Vec::as_slice)
    }
}

/// Labeled feature frames, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    feature_dim: usize,
    num_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl FrameDataset {
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "feature_dim and num_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} frames of dimension {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "frame {i} has label {} but there are {num_classes} classes",
                labels[i]
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature of frame {}", i / feature_dim)));
        }
        Ok(Self {
            feature_dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn from_frames(
        feature_dim: usize,
        num_classes: usize,
        frames: &[(Vec<f64>, usize)],
    ) -> Result<Self> {
        if let Some(i) = frames.iter().position(|(f, _)| f.len() != feature_dim) {
            return Err(Error::DimensionMismatch(format!(
                "frame {i} has {} features, expected {feature_dim}",
                frames[i].0.len()
            )));
        }
        let features = frames.iter().flat_map(|(f, _)| f.iter().copied()).collect();
        let labels = frames.iter().map(|(_, l)| *l).collect();
        Self::new(feature_dim, num_classes, features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.feature_dim)
            .zip(self.labels.iter().copied())
    }

    /// Checks the dataset can be fed to `net`.
    /// Frames `[0, at)` and `[at, len)` as two datasets.
    pub fn split(&self, at: usize) -> Result<(FrameDataset, FrameDataset)> {
        if at > self.len() {
            return Err(Error::DimensionMismatch(format!(
                "split at {at} of a {}-frame dataset",
                self.len()
            )));
        }
        let d = self.feature_dim;
        let head = FrameDataset::new(d, self.num_classes, self.features[..at * d].to_vec(), self.labels[..at].to_vec())?;
        let tail = FrameDataset::new(d, self.num_classes, self.features[at * d..].to_vec(), self.labels[at..].to_vec())?;
        Ok((head, tail))
    }

    pub fn check_compatible(&self, net: &DenseNet) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.feature_dim != net.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} features, network expects {}",
                self.feature_dim,
                net.input_dim()
            )));
        }
        if self.num_classes > net.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} classes, network outputs {}",
                self.num_classes,
                net.output_dim()
            )));
        }
        Ok(())
    }
}

/// Preallocated buffers for repeated forward/backward passes.
pub(crate) struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    pub(crate) fn new(net: &DenseNet) -> Self {
        let buf = || net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
        Self {
            pre: buf(),
            post: buf(),
            delta: buf(),
        }
    }

    pub(crate) fn forward(&mut self, net: &DenseNet, x: &[f64]) {
        for (k, layer) in net.layers.iter().enumerate() {
            let (done, rest) = self.post.split_at_mut(k);
            let input = done.last().map_or(x, Vec::as_slice);
            layer.affine_into(input, &mut self.pre[k]);
            layer.activation.apply(&self.pre[k], &mut rest[0]);
        }
    }

    pub(crate) fn output(&self) -> &[f64] {
        self.post.last().map_or(&[], Vec::as_slice)
    }

    /// Input seen by layer `k` during the last forward pass.
    pub(crate) fn layer_input<'a>(&'a self, k: usize, x: &'a [f64]) -> &'a [f64] {
        if k == 0 {
            x
        } else {
            &self.post[k - 1]
        }
    }

    /// Loss of the last forward pass against `label`, with clamped posteriors.
    pub(crate) fn loss(&self, label: usize) -> f64 {
        -self.output()[label].max(POSTERIOR_EPS).ln()
    }

    /// Sets the output-layer delta for cross-entropy against `label`.
    pub(crate) fn set_output_delta(&mut self, net: &DenseNet, label: usize) {
        let last = net.layers.len() - 1;
        let act = net.layers[last].activation;
        let post = &self.post[last];
        let pre = &self.pre[last];
        let delta = &mut self.delta[last];
        if act == Activation::Softmax {
            delta.copy_from_slice(post);
            delta[label] -= 1.0;
        } else {
            delta.iter_mut().for_each(|d| *d = 0.0);
            let p = post[label];
            if p > POSTERIOR_EPS {
                delta[label] = -act.derivative(pre[label], p) / p;
            }
        }
    }

    /// Propagates the output delta down through the hidden layers.
    pub(crate) fn backward(&mut self, net: &DenseNet) {
        for k in (1..net.layers.len()).rev() {
            let (lower, upper) = self.delta.split_at_mut(k);
            let delta_k = &upper[0];
            let below = &mut lower[k - 1];
            let w = &net.layers[k].weights;
            below.iter_mut().for_each(|d| *d = 0.0);
            for (r, &d) in delta_k.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (b, &wv) in below.iter_mut().zip(w.row(r)) {
                    *b += d * wv;
                }
            }
            let act = net.layers[k - 1].activation;
            for ((b, &pre), &post) in below.iter_mut().zip(&self.pre[k - 1]).zip(&self.post[k - 1]) {
                *b *= act.derivative(pre, post);
            }
        }
    }

    pub(crate) fn delta(&self, k: usize) -> &[f64] {
        &self.delta[k]
    }

    pub(crate) fn delta_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.delta[k]
    }

    /// Adds `scale ·` the per-frame gradient held in the deltas into `grads`.
    pub(crate) fn accumulate(&self, x: &[f64], grads: &mut Gradients, scale: f64) {
        for k in 0..self.delta.len() {
            let input = self.layer_input(k, x);
            let gw = &mut grads.weights[k];
            for (r, &d) in self.delta[k].iter().enumerate() {
                let d = d * scale;
                if d == 0.0 {
                    continue;
                }
                for (g, &a) in gw.row_mut(r).iter_mut().zip(input) {
                    *g += d * a;
                }
                grads.bias[k][r] += d;
            }
        }
    }
}

/// Gradient of a scalar loss with respect to every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    fn reset(&mut self) {
        for w in &mut self.weights {
            w.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Mean negative log-likelihood of the labels, posteriors clamped at [`POSTERIOR_EPS`].
pub fn cross_entropy(net: &DenseNet, data: &FrameDataset) -> Result<f64> {
    data.check_compatible(net)?;
    let mut ws = Workspace::new(net);
    let mut total = 0.0;
    for (x, label) in data.iter() {
        ws.forward(net, x);
        total += ws.loss(label);
    }
    Ok(total / data.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to all parameters.
pub fn loss_gradient(net: &DenseNet, data: &FrameDataset) -> Result<(f64, Gradients)> {
    data.check_compatible(net)?;
    let mut ws = Workspace::new(net);
    let mut grads = Gradients::zeros(net);
    let scale = 1.0 / data.len() as f64;
    let mut total = 0.0;
    for (x, label) in data.iter() {
        ws.forward(net, x);
        total += ws.loss(label);
        ws.set_output_delta(net, label);
        ws.backward(net);
        ws.accumulate(x, &mut grads, scale);
    }
    Ok((total * scale, grads))
}

/// Fraction of frames whose argmax posterior equals the label (ties to the lowest class).
pub fn frame_accuracy(net: &DenseNet, data: &FrameDataset) -> Result<f64> {
    data.check_compatible(net)?;
    let mut ws = Workspace::new(net);
    let mut correct = 0usize;
    for (x, label) in data.iter() {
        ws.forward(net, x);
        if argmax(ws.output()) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training-set loss measured after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Set when the run ended above its starting loss and the initial weights were restored.
    pub reverted: bool,
}

/// Mini-batch SGD on mean cross-entropy.
///
/// Masked weights are held at exactly zero throughout. If the final training
/// loss exceeds the initial one, the starting weights are restored so the
/// returned network never ends worse than it began.
pub fn train_sgd(
    net: &mut DenseNet,
    data: &FrameDataset,
    cfg: &TrainConfig,
    mask: Option<&PruneMask>,
) -> Result<TrainReport> {
    cfg.validate()?;
    data.check_compatible(net)?;
    if let Some(m) = mask {
        m.check_shape(net)?;
        m.apply_to(net)?;
    }
    let initial_loss = cross_entropy(net, data)?;
    let snapshot = net.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut ws = Workspace::new(net);
    let mut grads = Gradients::zeros(net);
    let mut lr = cfg.learning_rate;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                let x = data.features(i);
                ws.forward(net, x);
                ws.set_output_delta(net, data.label(i));
                ws.backward(net);
                ws.accumulate(x, &mut grads, 1.0);
            }
            let step = lr / batch.len() as f64;
            for (k, layer) in net.layers.iter_mut().enumerate() {
                let keep = mask.map(|m| m.layer(k).keep());
                let gw = grads.weights[k].data();
                let w = layer.weights.data_mut();
                match keep {
                    Some(keep) => {
                        for ((w, &g), &kept) in w.iter_mut().zip(gw).zip(keep) {
                            if kept {
                                *w -= step * g;
                            }
                        }
                    }
                    None => {
                        for (w, &g) in w.iter_mut().zip(gw) {
                            *w -= step * g;
                        }
                    }
                }
                for (b, &g) in layer.bias.iter_mut().zip(&grads.bias[k]) {
                    *b -= step * g;
                }
            }
        }
        lr *= cfg.lr_decay;
        let loss = cross_entropy(net, data)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged (loss {loss}); lower the learning rate"
            )));
        }
        epoch_losses.push(loss);
    }

    let mut final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    let reverted = final_loss > initial_loss;
    if reverted {
        *net = snapshot;
        final_loss = initial_loss;
    }
    Ok(TrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
        reverted,
    })
}
