//! Shallow adaptors mapping tap features to per-bit probabilities over a
//! target hypervector, trained with a class-balanced binary focal loss.
//!
//! An adaptor is a small MLP: `depth` ReLU hidden layers followed by a linear
//! projection to `D` logits and a logistic squash. Depth 0 is a purely linear
//! map from the tap to the logits.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureDataset;
use crate::error::{EarError, Result};
use crate::hdc::{Hypervector, TargetCodebook};
use crate::rng::{self, EarRng};

pub const MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdaptorSpec {
    pub tap_id: usize,
    pub hidden_widths: Vec<usize>,
}

impl AdaptorSpec {
    pub fn new(tap_id: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            tap_id,
            hidden_widths,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(tap_id: usize) -> Self {
        Self {
            tap_id,
            hidden_widths: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth() > MAX_DEPTH {
            return Err(EarError::Argument(format!(
                "adaptor depth {} exceeds {MAX_DEPTH}",
                self.depth()
            )));
        }
        if self.hidden_widths.contains(&0) {
            return Err(EarError::Argument("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Weights plus biases of every layer, including the projection to `output_dim`.
    pub fn parameter_count(&self, input_dim: usize, output_dim: usize) -> usize {
        let mut fan_in = input_dim;
        let mut total = 0;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&output_dim)) {
            total += fan_in * w + w;
            fan_in = w;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(EarError::dim(inputs * outputs, weights.len()));
        }
        if bias.len() != outputs {
            return Err(EarError::dim(outputs, bias.len()));
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(EarError::NonFinite("dense layer parameters".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    fn init(inputs: usize, outputs: usize, rng: &mut EarRng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Parameters of one adaptor: hidden layers then the output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptorParams {
    layers: Vec<DenseLayer>,
}

/// Per-layer gradients, shaped like [`AdaptorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= s);
        }
    }
}

impl AdaptorParams {
    pub fn init(spec: &AdaptorSpec, input_dim: usize, output_dim: usize, rng: &mut EarRng) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 || output_dim == 0 {
            return Err(EarError::Argument("adaptor dims must be positive".into()));
        }
        let mut layers = Vec::with_capacity(spec.depth() + 1);
        let mut fan_in = input_dim;
        for &w in spec.hidden_widths.iter().chain(std::iter::once(&output_dim)) {
            layers.push(DenseLayer::init(fan_in, w, rng));
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(EarError::Argument("adaptor needs an output layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(EarError::dim(pair[0].outputs, pair[1].inputs));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero parameters (every score is exactly 0.5).
    pub fn zeros(spec: &AdaptorSpec, input_dim: usize, output_dim: usize) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &w in spec.hidden_widths.iter().chain(std::iter::once(&output_dim)) {
            layers.push(DenseLayer::zeros(fan_in, w));
            fan_in = w;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(EarError::dim(self.num_params(), flat.len()));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32` so the EARM container
    /// reproduces this model exactly.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x = *x as f32 as f64;
            }
        }
    }

    fn check_input(&self, feats: &[f32]) -> Result<Vec<f64>> {
        if feats.len() != self.input_dim() {
            return Err(EarError::dim(self.input_dim(), feats.len()));
        }
        Ok(feats.iter().map(|&x| f64::from(x)).collect())
    }

    /// Activations entering each layer, plus the final logits.
    fn activations(&self, x: Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&h);
            inputs.push(h);
            if i < last {
                relu(&mut z);
            }
            h = z;
        }
        (inputs, h)
    }

    pub fn logits(&self, feats: &[f32]) -> Result<Vec<f64>> {
        let x = self.check_input(feats)?;
        let (_, z) = self.activations(x);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(EarError::Numeric("non-finite adaptor activation".into()));
        }
        Ok(z)
    }

    /// Per-bit probabilities, each strictly inside `(0, 1)`.
    pub fn forward(&self, feats: &[f32]) -> Result<Vec<f64>> {
        let z = self.logits(feats)?;
        Ok(z.into_iter()
            .map(|v| logistic(v).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
            .collect())
    }

    /// Output of the layer preceding the final projection (the tap features
    /// themselves for a linear adaptor).
    pub fn penultimate(&self, feats: &[f32]) -> Result<Vec<f64>> {
        let x = self.check_input(feats)?;
        let (mut inputs, _) = self.activations(x);
        Ok(inputs.pop().expect("at least one layer"))
    }

    /// Focal loss of one sample and its gradient wrt every parameter.
    pub fn loss_and_gradients(
        &self,
        feats: &[f32],
        target: &Hypervector,
        cfg: &FocalLossConfig,
    ) -> Result<(f64, Gradients)> {
        let x = self.check_input(feats)?;
        let (inputs, z) = self.activations(x);
        let (loss, mut delta) = focal_loss_logits(&z, target, cfg)?;
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &inputs[li];
            let mut g = DenseLayer::zeros(layer.inputs, layer.outputs);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w = d * a;
                }
            }
            if li > 0 {
                // The input to layer li is relu(pre); a zero activation has zero slope.
                let mut back = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (b, &w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, &a) in back.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
            grads.push(g);
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}

/// Focusing exponent plus per-element weights for positive and negative targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub alpha_pos: Vec<f64>,
    pub alpha_neg: Vec<f64>,
}

impl FocalLossConfig {
    pub fn uniform(dim: usize, gamma: f64) -> Self {
        Self {
            gamma,
            alpha_pos: vec![1.0; dim],
            alpha_neg: vec![1.0; dim],
        }
    }

    /// Inverse-frequency weights with add-one smoothing: a positive target at
    /// element `i` weighs `(n_neg + 1) / (n + 2)`, a negative one
    /// `(n_pos + 1) / (n + 2)`. Both are then scaled so the average weight
    /// actually applied over the training targets is 1.
    pub fn from_targets<'a, I>(targets: I, dim: usize, gamma: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Hypervector>,
    {
        let mut pos = vec![0usize; dim];
        let mut n = 0usize;
        for t in targets {
            if t.dim() != dim {
                return Err(EarError::dim(dim, t.dim()));
            }
            for (c, b) in pos.iter_mut().zip(t.bits()) {
                *c += b as usize;
            }
            n += 1;
        }
        if n == 0 {
            return Err(EarError::Argument("no targets to weight".into()));
        }
        let nf = n as f64;
        let mut alpha_pos = Vec::with_capacity(dim);
        let mut alpha_neg = Vec::with_capacity(dim);
        let mut applied = 0.0;
        for &p in &pos {
            let (p, q) = (p as f64, (n - p) as f64);
            let wp = (q + 1.0) / (nf + 2.0);
            let wn = (p + 1.0) / (nf + 2.0);
            applied += (p * wp + q * wn) / nf;
            alpha_pos.push(wp);
            alpha_neg.push(wn);
        }
        let scale = dim as f64 / applied;
        alpha_pos.iter_mut().chain(alpha_neg.iter_mut()).for_each(|a| *a *= scale);
        let cfg = Self {
            gamma,
            alpha_pos,
            alpha_neg,
        };
        cfg.validate(dim)?;
        Ok(cfg)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(EarError::Argument(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        if self.alpha_pos.len() != dim || self.alpha_neg.len() != dim {
            return Err(EarError::dim(dim, self.alpha_pos.len().min(self.alpha_neg.len())));
        }
        if self
            .alpha_pos
            .iter()
            .chain(&self.alpha_neg)
            .any(|a| !(a.is_finite() && *a > 0.0))
        {
            return Err(EarError::Argument("focal alpha must be finite and positive".into()));
        }
        Ok(())
    }

    fn alpha(&self, i: usize, positive: bool) -> f64 {
        if positive {
            self.alpha_pos[i]
        } else {
            self.alpha_neg[i]
        }
    }
}

/// Mean over the `D` elements of `-α_i (1 - p_t)^γ ln p_t`, where `p_t` is
/// the probability given to the target bit. Returns the loss and its
/// gradient with respect to `scores`.
pub fn focal_loss(scores: &[f64], target: &Hypervector, cfg: &FocalLossConfig) -> Result<(f64, Vec<f64>)> {
    let d = scores.len();
    if target.dim() != d {
        return Err(EarError::dim(d, target.dim()));
    }
    cfg.validate(d)?;
    let g = cfg.gamma;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(d);
    for (i, (&p, t)) in scores.iter().zip(target.bits()).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(EarError::Domain(format!("score[{i}] = {p} is not in (0, 1)")));
        }
        let a = cfg.alpha(i, t);
        let pt = if t { p } else { 1.0 - p };
        let q = 1.0 - pt;
        loss += -a * q.powf(g) * pt.ln();
        let focus = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * pt.ln() };
        let dpt = a * (focus - q.powf(g) / pt);
        grad.push(if t { dpt } else { -dpt } / d as f64);
    }
    Ok((loss / d as f64, grad))
}

/// Same loss evaluated from logits, with the gradient wrt the logits. Used
/// by training; stable for saturated logits.
pub fn focal_loss_logits(
    logits: &[f64],
    target: &Hypervector,
    cfg: &FocalLossConfig,
) -> Result<(f64, Vec<f64>)> {
    let d = logits.len();
    if target.dim() != d {
        return Err(EarError::dim(d, target.dim()));
    }
    let g = cfg.gamma;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(d);
    for (i, (&z, t)) in logits.iter().zip(target.bits()).enumerate() {
        let a = cfg.alpha(i, t);
        let s = if t { 1.0 } else { -1.0 };
        let ln_pt = -softplus(-s * z);
        let pt = logistic(s * z);
        let q = logistic(-s * z);
        let qg = q.powf(g);
        loss += -a * qg * ln_pt;
        grad.push(s * a * (g * pt * qg * ln_pt - qg * q) / d as f64);
    }
    Ok((loss / d as f64, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma_focal: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            epochs: 40,
            gamma_focal: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EarError::Config("train.lr must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(EarError::Config("train.batch and train.epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(EarError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.gamma_focal.is_finite() && self.gamma_focal >= 0.0) {
            return Err(EarError::Config("hd.gamma_focal must be >= 0".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// A spec together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptor {
    pub spec: AdaptorSpec,
    pub params: AdaptorParams,
}

impl Adaptor {
    pub fn forward(&self, taps: &crate::encoder::TapFeatures) -> Result<Vec<f64>> {
        self.params.forward(taps.tap(self.spec.tap_id)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAdaptors {
    pub adaptors: Vec<Adaptor>,
    /// Mean training loss per epoch, per adaptor.
    pub loss_history: Vec<Vec<f64>>,
    /// Loss of the untrained initialization over the full training set.
    pub initial_loss: Vec<f64>,
}

/// Local class index of every sample, given the sorted class list.
pub(crate) fn local_labels(data: &FeatureDataset, classes: &[u32]) -> Result<Vec<usize>> {
    data.labels()
        .iter()
        .map(|l| {
            classes
                .binary_search(l)
                .map_err(|_| EarError::Argument(format!("label {l} is not in the class list")))
        })
        .collect()
}

/// Trains one adaptor per spec against the codebook rows of its slot.
/// `classes` is the sorted list of labels this domain covers; adaptor `j`
/// maps class `classes[c]` to `codebook.target(j, c)`.
pub fn train_adaptor_set(
    specs: &[AdaptorSpec],
    data: &FeatureDataset,
    codebook: &TargetCodebook,
    classes: &[u32],
    cfg: &TrainConfig,
) -> Result<TrainedAdaptors> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(EarError::Argument("cannot train on an empty dataset".into()));
    }
    if specs.is_empty() {
        return Err(EarError::Argument("no adaptors to train".into()));
    }
    if specs.len() > codebook.num_adaptors() || classes.len() > codebook.num_classes() {
        return Err(EarError::Argument(format!(
            "codebook covers {} adaptors x {} classes, need {} x {}",
            codebook.num_adaptors(),
            codebook.num_classes(),
            specs.len(),
            classes.len()
        )));
    }
    let local = local_labels(data, classes)?;
    let dim = codebook.dim();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adaptors = Vec::with_capacity(specs.len());
    let mut histories = Vec::with_capacity(specs.len());
    let mut initial = Vec::with_capacity(specs.len());

    for (slot, spec) in specs.iter().enumerate() {
        let input_dim = *data.tap_dims().get(spec.tap_id).ok_or_else(|| {
            EarError::Argument(format!("tap {} not present in dataset", spec.tap_id))
        })?;
        let mut params = AdaptorParams::init(
            spec,
            input_dim,
            dim,
            &mut rng::derived(cfg.seed, &[0xA11, slot as u64]),
        )?;
        let targets: Vec<&Hypervector> = local.iter().map(|&c| codebook.target(slot, c)).collect();
        let focal = FocalLossConfig::from_targets(targets.iter().copied(), dim, cfg.gamma_focal)?;

        let full_loss = |p: &AdaptorParams| -> Result<f64> {
            let mut total = 0.0;
            for (s, t) in data.samples().iter().zip(&targets) {
                total += focal_loss_logits(&p.logits(s.tap(spec.tap_id)?)?, t, &focal)?.0;
            }
            Ok(total / data.len() as f64)
        };
        initial.push(full_loss(&params)?);

        let mut adam = Adam::new(params.num_params());
        let mut shuffle_rng = rng::derived(cfg.seed, &[0x5EED, slot as u64]);
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut flat = params.flat_params();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: Option<Gradients> = None;
                for &i in batch {
                    let feats = data.samples()[i].tap(spec.tap_id)?;
                    let (loss, g) = params.loss_and_gradients(feats, targets[i], &focal)?;
                    epoch_loss += loss;
                    match &mut acc {
                        Some(a) => a.accumulate(&g),
                        None => acc = Some(g),
                    }
                }
                let mut g = acc.expect("non-empty batch");
                g.scale(1.0 / batch.len() as f64);
                adam.step(&mut flat, &g.flatten(), cfg);
                params.set_flat_params(&flat)?;
            }
            let mean = epoch_loss / data.len() as f64;
            if !mean.is_finite() {
                return Err(EarError::Training(format!(
                    "adaptor {slot} diverged at epoch {epoch}"
                )));
            }
            history.push(mean);
        }
        params.round_to_f32();
        if params.flat_params().iter().any(|x| !x.is_finite()) {
            return Err(EarError::Training(format!("adaptor {slot} has non-finite weights")));
        }
        adaptors.push(Adaptor {
            spec: spec.clone(),
            params,
        });
        histories.push(history);
    }
    Ok(TrainedAdaptors {
        adaptors,
        loss_history: histories,
        initial_loss: initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TapFeatures;

    fn toy_params(rng: &mut EarRng) -> AdaptorParams {
        AdaptorParams::init(&AdaptorSpec::new(0, vec![4]).unwrap(), 5, 3, rng).unwrap()
    }

    #[test]
    fn zero_params_give_half() {
        let p = AdaptorParams::zeros(&AdaptorSpec::new(0, vec![6, 3]).unwrap(), 4, 7);
        let out = p.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.5; 7]);
    }

    #[test]
    fn forward_is_bounded_and_deterministic() {
        let mut r = rng::seeded(1);
        let p = AdaptorParams::init(&AdaptorSpec::new(0, vec![16, 8]).unwrap(), 10, 31, &mut r).unwrap();
        for _ in 0..1000 {
            let x: Vec<f32> = (0..10).map(|_| r.random_range(-50.0..50.0)).collect();
            let a = p.forward(&x).unwrap();
            assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
            assert_eq!(a, p.forward(&x).unwrap());
        }
        assert!(matches!(p.forward(&[0.0; 3]), Err(EarError::Dimension { .. })));
    }

    #[test]
    fn focal_loss_hand_values() {
        let cfg = FocalLossConfig::uniform(1, 2.0);
        let (l, _) = focal_loss(&[0.5], &Hypervector::from_u8s(&[1]), &cfg).unwrap();
        assert!((l - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.17329).abs() < 1e-5);

        let cfg = FocalLossConfig::uniform(3, 2.0);
        let (l, _) = focal_loss(
            &[1.0 - 1e-15, f64::MIN_POSITIVE, 1.0 - 1e-15],
            &Hypervector::from_u8s(&[1, 0, 1]),
            &cfg,
        )
        .unwrap();
        assert!(l.abs() < 1e-12);
        assert!(focal_loss(&[0.5, 0.5], &Hypervector::from_u8s(&[1]), &FocalLossConfig::uniform(2, 2.0)).is_err());
    }

    #[test]
    fn score_gradient_matches_central_differences() {
        let mut r = rng::seeded(7);
        for _ in 0..50 {
            let d = 5;
            let scores: Vec<f64> = (0..d).map(|_| r.random_range(0.05..0.95)).collect();
            let target = Hypervector::from_bits((0..d).map(|_| r.random::<bool>()));
            let mut cfg = FocalLossConfig::uniform(d, r.random_range(0.0..3.0));
            cfg.alpha_pos = (0..d).map(|_| r.random_range(0.2..2.0)).collect();
            let (_, g) = focal_loss(&scores, &target, &cfg).unwrap();
            let h = 1e-5;
            for i in 0..d {
                let mut up = scores.clone();
                let mut dn = scores.clone();
                up[i] += h;
                dn[i] -= h;
                let num = (focal_loss(&up, &target, &cfg).unwrap().0
                    - focal_loss(&dn, &target, &cfg).unwrap().0)
                    / (2.0 * h);
                let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "element {i}: {} vs {num}", g[i]);
            }
        }
    }

    #[test]
    fn logit_and_score_losses_agree() {
        let mut r = rng::seeded(8);
        let d = 9;
        let z: Vec<f64> = (0..d).map(|_| r.random_range(-4.0..4.0)).collect();
        let target = Hypervector::from_bits((0..d).map(|_| r.random::<bool>()));
        let cfg = FocalLossConfig::uniform(d, 2.0);
        let p: Vec<f64> = z.iter().map(|&v| logistic(v)).collect();
        let (a, gp) = focal_loss(&p, &target, &cfg).unwrap();
        let (b, gz) = focal_loss_logits(&z, &target, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
        for i in 0..d {
            let chain = gp[i] * p[i] * (1.0 - p[i]);
            assert!((chain - gz[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut r = rng::seeded(11);
        let p = toy_params(&mut r);
        let x: Vec<f32> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let target = Hypervector::from_u8s(&[1, 0, 1]);
        let cfg = FocalLossConfig::uniform(3, 2.0);
        let (_, g) = p.loss_and_gradients(&x, &target, &cfg).unwrap();
        let analytic = g.flatten();
        let base = p.flat_params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut q = p.clone();
            let mut v = base.clone();
            v[i] += h;
            q.set_flat_params(&v).unwrap();
            let up = q.loss_and_gradients(&x, &target, &cfg).unwrap().0;
            v[i] -= 2.0 * h;
            q.set_flat_params(&v).unwrap();
            let dn = q.loss_and_gradients(&x, &target, &cfg).unwrap().0;
            let num = (up - dn) / (2.0 * h);
            let rel = (analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-4 || (analytic[i] - num).abs() < 1e-10, "param {i}");
        }
    }

    #[test]
    fn alpha_weights_are_positive_and_balanced() {
        let targets = [
            Hypervector::from_u8s(&[1, 1, 0]),
            Hypervector::from_u8s(&[1, 0, 0]),
            Hypervector::from_u8s(&[1, 1, 0]),
            Hypervector::from_u8s(&[1, 0, 0]),
        ];
        let cfg = FocalLossConfig::from_targets(&targets, 3, 2.0).unwrap();
        // element 0 is always 1, element 2 always 0: smoothing keeps weights finite
        assert!(cfg.alpha_pos.iter().chain(&cfg.alpha_neg).all(|a| a.is_finite() && *a > 0.0));
        // the balanced element weighs both signs equally
        assert!((cfg.alpha_pos[1] - cfg.alpha_neg[1]).abs() < 1e-12);
        // rare positives weigh more than common ones
        assert!(cfg.alpha_neg[0] > cfg.alpha_pos[0]);
        let mut applied = 0.0;
        for t in &targets {
            for (i, b) in t.bits().enumerate() {
                applied += if b { cfg.alpha_pos[i] } else { cfg.alpha_neg[i] };
            }
        }
        assert!((applied / 12.0 - 1.0).abs() < 1e-12);
    }

    fn blobs(n_per: usize, seed: u64) -> FeatureDataset {
        let mut r = rng::seeded(seed);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per * 2 {
            let c = (i % 2) as u32;
            let center = if c == 0 { -1.5 } else { 1.5 };
            let v: Vec<f32> = (0..4).map(|_| center + r.random_range(-0.5f32..0.5)).collect();
            samples.push(TapFeatures::new(vec![v]).unwrap());
            labels.push(c);
        }
        let n = labels.len();
        FeatureDataset::new(samples, labels, vec![0; n], vec![4], 2).unwrap()
    }

    #[test]
    fn training_separable_blobs() {
        let data = blobs(100, 1);
        let codebook = TargetCodebook::generate(2, 1, 3).unwrap();
        let specs = [AdaptorSpec::new(0, vec![8]).unwrap()];
        let cfg = TrainConfig::default();
        let trained = train_adaptor_set(&specs, &data, &codebook, &[0, 1], &cfg).unwrap();
        let hist = &trained.loss_history[0];
        assert_eq!(hist.len(), 40);
        assert!(hist.iter().all(|l| l.is_finite()));
        assert!(hist.last().unwrap() < hist.first().unwrap());

        let test = blobs(100, 2);
        let adaptor = &trained.adaptors[0];
        let mut correct = 0;
        for (s, &l) in test.samples().iter().zip(test.labels()) {
            let h = crate::hdc::round_binarize(&adaptor.forward(s).unwrap()).unwrap();
            let d0 = h.hamming(codebook.target(0, 0)).unwrap();
            let d1 = h.hamming(codebook.target(0, 1)).unwrap();
            let pred = if d1 < d0 { 1 } else { 0 };
            correct += (pred == l) as usize;
        }
        assert!(correct as f64 / test.len() as f64 >= 0.95);

        let again = train_adaptor_set(&specs, &data, &codebook, &[0, 1], &cfg).unwrap();
        assert_eq!(again.adaptors, trained.adaptors);
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let data = blobs(4, 1);
        let codebook = TargetCodebook::generate(2, 1, 3).unwrap();
        let empty = data.subset(&[]);
        let spec = [AdaptorSpec::linear(0)];
        assert!(matches!(
            train_adaptor_set(&spec, &empty, &codebook, &[0, 1], &TrainConfig::default()),
            Err(EarError::Argument(_))
        ));
        let two = [AdaptorSpec::linear(0), AdaptorSpec::linear(0)];
        assert!(train_adaptor_set(&two, &data, &codebook, &[0, 1], &TrainConfig::default()).is_err());
        assert!(train_adaptor_set(&spec, &data, &codebook, &[0], &TrainConfig::default()).is_err());
    }

    #[test]
    fn parameter_count_matches_layers() {
        let spec = AdaptorSpec::new(2, vec![7, 5]).unwrap();
        let p = AdaptorParams::init(&spec, 11, 31, &mut rng::seeded(0)).unwrap();
        assert_eq!(p.num_params(), spec.parameter_count(11, 31));
        assert_eq!(spec.parameter_count(11, 31), 11 * 7 + 7 + 7 * 5 + 5 + 5 * 31 + 31);
        assert!(AdaptorSpec::new(0, vec![1, 1, 1, 1]).is_err());
    }
}
