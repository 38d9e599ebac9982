//! Sequence models, the PATTERN baseline, and their training loop.
//!
//! Everything runs in `f64` on the CPU. Parameters of a model live in one
//! flat vector; layouts map named blocks onto ranges of it, which keeps the
//! optimizer, checkpointing and gradient checks trivial.

pub mod encoder;
mod optim;
pub mod pattern;
mod tensor;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::EncoderConfig;
pub use optim::AdamW;
pub use pattern::{pattern_features, Standardizer, PATTERN_DIM, PATTERN_HIDDEN};

use crate::features::{FeatureSequence, FeatureVector};
use crate::heads::{self, HeadError, Method, SoftTargets};
use crate::rng::substream;
use encoder::{EncoderLayout, Init};
use pattern::MlpLayout;
use tensor::{log_softmax, softmax_in_place};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("window of {len} rows is shorter than the minimum of {min}")]
    WindowTooShort { len: usize, min: usize },
    #[error("empty feature sequence")]
    EmptySequence,
    #[error("label {0} has no training examples")]
    MissingClass(u32),
    #[error("label {label} outside 1..={k}")]
    LabelOutOfRange { label: u32, k: u32 },
    #[error("training diverged at step {step} (non-finite loss or parameters)")]
    DivergedLoss { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{method} models take {expected} inputs")]
    WrongInput { method: Method, expected: &'static str },
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// How the learning rate follows the training-set size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrRule {
    /// `lr = levels / reference_levels * base`.
    ScaledByLevels { base: f64, reference_levels: f64 },
    Fixed(f64),
}

impl LrRule {
    pub fn learning_rate(&self, levels: usize) -> f64 {
        match *self {
            LrRule::ScaledByLevels { base, reference_levels } => levels as f64 / reference_levels * base,
            LrRule::Fixed(lr) => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub lr: LrRule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            weight_decay: 5e-2,
            lr: LrRule::ScaledByLevels {
                base: 1e-4,
                reference_levels: 1500.0,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let lr_ok = match self.lr {
            LrRule::ScaledByLevels { base, reference_levels } => base > 0.0 && reference_levels > 0.0,
            LrRule::Fixed(lr) => lr > 0.0,
        };
        if self.epochs == 0 || self.batch_size == 0 || !lr_ok || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(ModelError::InvalidConfig(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One model input: a feature window for sequence models, or the raw
/// static statistics for PATTERN.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Window(&'a [FeatureVector]),
    Static(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub input: Input<'a>,
    pub label: u32,
}

#[derive(Debug, Clone)]
enum Network {
    Sequence(EncoderLayout),
    Mlp(MlpLayout),
}

impl Network {
    fn total(&self) -> usize {
        match self {
            Network::Sequence(l) => l.total,
            Network::Mlp(l) => l.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub method: Method,
    pub k: u32,
    pub encoder: EncoderConfig,
    pub seed: u64,
    pub standardizer: Option<Standardizer>,
    /// Mean training loss of every epoch.
    pub loss_history: Vec<f64>,
    params: Vec<f64>,
    network: Network,
    soft: Option<SoftTargets>,
}

fn build_network(method: Method, k: u32, encoder: &EncoderConfig) -> Result<Network, ModelError> {
    if k < 2 {
        return Err(HeadError::TooFewCategories(k).into());
    }
    let out = method.output_dim(k);
    Ok(match method {
        Method::Pattern => Network::Mlp(MlpLayout::new(PATTERN_DIM, out)),
        _ => {
            encoder.validate().map_err(ModelError::InvalidConfig)?;
            let extra = if method == Method::RedSvm { k as usize - 1 } else { 0 };
            Network::Sequence(EncoderLayout::new(encoder, out, extra))
        }
    })
}

fn soft_targets(method: Method, k: u32) -> Option<SoftTargets> {
    match method {
        Method::Laplace => Some(SoftTargets::laplace(k)),
        Method::Binomial => Some(SoftTargets::binomial(k)),
        _ => None,
    }
}

impl Model {
    /// A freshly initialized model.
    pub fn new(method: Method, k: u32, encoder: &EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        let network = build_network(method, k, encoder)?;
        let mut params = vec![0.0; network.total()];
        let mut rng = substream(seed, "init", 0);
        let plan = match &network {
            Network::Sequence(l) => l.init_plan(),
            Network::Mlp(l) => l.init_plan(),
        };
        for (range, init) in plan {
            match init {
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-a, a);
                    for p in &mut params[range] {
                        *p = dist.sample(&mut rng);
                    }
                }
                Init::Zeros => params[range].fill(0.0),
                Init::Ones => params[range].fill(1.0),
            }
        }
        if let Network::Sequence(l) = &network {
            // RED-SVM thresholds start evenly spaced over [-1, 1].
            let n = l.extra.len();
            for (i, p) in params[l.extra.clone()].iter_mut().enumerate() {
                *p = if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
            }
        }
        Ok(Self {
            method,
            k,
            encoder: encoder.clone(),
            seed,
            standardizer: None,
            loss_history: Vec::new(),
            params,
            network,
            soft: soft_targets(method, k),
        })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(
        method: Method,
        k: u32,
        encoder: &EncoderConfig,
        seed: u64,
        params: Vec<f64>,
        standardizer: Option<Standardizer>,
    ) -> Result<Self, ModelError> {
        let network = build_network(method, k, encoder)?;
        if params.len() != network.total() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                network.total(),
                params.len()
            )));
        }
        if method == Method::Pattern && standardizer.is_none() {
            return Err(ModelError::InvalidConfig("PATTERN model without feature scaling".into()));
        }
        Ok(Self {
            method,
            k,
            encoder: encoder.clone(),
            seed,
            standardizer,
            loss_history: Vec::new(),
            params,
            network,
            soft: soft_targets(method, k),
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// RED-SVM thresholds; empty for every other method.
    pub fn thresholds(&self) -> &[f64] {
        match &self.network {
            Network::Sequence(l) => &self.params[l.extra.clone()],
            Network::Mlp(_) => &[],
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    fn check_window(&self, window: &[FeatureVector]) -> Result<(), ModelError> {
        if window.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let min = self.encoder.min_len();
        if window.len() < min {
            return Err(ModelError::WindowTooShort { len: window.len(), min });
        }
        Ok(())
    }

    /// Mean-pooled embedding of one window.
    pub fn encode(&self, window: &[FeatureVector]) -> Result<Vec<f64>, ModelError> {
        let Network::Sequence(layout) = &self.network else {
            return Err(ModelError::WrongInput {
                method: self.method,
                expected: "static",
            });
        };
        self.check_window(window)?;
        Ok(layout.forward(&self.params, window.as_flattened(), window.len()).pooled)
    }

    fn raw_output(&self, params: &[f64], input: Input<'_>) -> Result<Vec<f64>, ModelError> {
        Ok(match (&self.network, input) {
            (Network::Sequence(layout), Input::Window(w)) => {
                self.check_window(w)?;
                layout.forward(params, w.as_flattened(), w.len()).output
            }
            (Network::Mlp(layout), Input::Static(x)) => layout.forward(params, &self.scale(x)?).output,
            _ => return Err(self.wrong_input()),
        })
    }

    fn wrong_input(&self) -> ModelError {
        ModelError::WrongInput {
            method: self.method,
            expected: if self.method == Method::Pattern { "static" } else { "window" },
        }
    }

    fn scale(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != PATTERN_DIM {
            return Err(ModelError::InvalidConfig(format!(
                "expected {PATTERN_DIM} static features, got {}",
                x.len()
            )));
        }
        Ok(match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        })
    }

    /// Head output in decoder space: probabilities for probabilistic heads,
    /// the raw score for regression and RED-SVM.
    pub fn head_output(&self, input: Input<'_>) -> Result<Vec<f64>, ModelError> {
        let mut z = self.raw_output(&self.params, input)?;
        match self.method {
            Method::Pattern | Method::Classification | Method::Laplace | Method::Binomial => softmax_in_place(&mut z),
            Method::NnRank => z.iter_mut().for_each(|v| *v = heads::sigmoid(*v)),
            Method::Regression | Method::RedSvm => {}
        }
        Ok(z)
    }

    pub fn decode_output(&self, output: &[f64]) -> Result<u32, ModelError> {
        Ok(heads::decode(self.method, output, self.k, self.thresholds(), self.soft.as_ref())?)
    }

    /// Ensemble-averaged head output over random contiguous windows.
    pub fn predict_output(&self, seq: &FeatureSequence, seed: u64) -> Result<Vec<f64>, ModelError> {
        if self.method == Method::Pattern {
            return Err(self.wrong_input());
        }
        let rows = &seq.rows;
        self.check_window(rows)?;
        let w = self.encoder.window;
        if rows.len() <= w {
            // Every member would see the whole sequence.
            return self.head_output(Input::Window(rows));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members = self.encoder.ensemble;
        let mut acc = vec![0.0; self.method.output_dim(self.k)];
        for _ in 0..members {
            let start = rng.gen_range(0..=rows.len() - w);
            let out = self.head_output(Input::Window(&rows[start..start + w]))?;
            for (a, v) in acc.iter_mut().zip(out) {
                *a += v / members as f64;
            }
        }
        Ok(acc)
    }

    pub fn predict(&self, seq: &FeatureSequence, seed: u64) -> Result<u32, ModelError> {
        let out = self.predict_output(seq, seed)?;
        self.decode_output(&out)
    }

    /// PATTERN prediction from raw static statistics.
    pub fn predict_static(&self, features: &[f64]) -> Result<u32, ModelError> {
        if self.method != Method::Pattern {
            return Err(self.wrong_input());
        }
        let out = self.head_output(Input::Static(features))?;
        self.decode_output(&out)
    }

    /// Loss of one example at the given parameters.
    pub fn loss_at(&self, params: &[f64], input: Input<'_>, label: u32) -> Result<f64, ModelError> {
        let z = self.raw_output(params, input)?;
        let thresholds = self.thresholds_of(params);
        Ok(self.head_loss(&z, label, thresholds).0)
    }

    pub fn sample_loss(&self, input: Input<'_>, label: u32) -> Result<f64, ModelError> {
        self.loss_at(&self.params, input, label)
    }

    /// Loss of one example and its gradient with respect to every
    /// parameter.
    pub fn sample_loss_grad(&self, input: Input<'_>, label: u32) -> Result<(f64, Vec<f64>), ModelError> {
        let mut grads = vec![0.0; self.params.len()];
        let loss = self.accumulate_grad(input, label, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    fn thresholds_of<'p>(&self, params: &'p [f64]) -> &'p [f64] {
        match &self.network {
            Network::Sequence(l) => &params[l.extra.clone()],
            Network::Mlp(_) => &[],
        }
    }

    /// Adds `weight * d loss / d params` into `grads`; returns the loss.
    fn accumulate_grad(&self, input: Input<'_>, label: u32, weight: f64, grads: &mut [f64]) -> Result<f64, ModelError> {
        match (&self.network, input) {
            (Network::Sequence(layout), Input::Window(w)) => {
                self.check_window(w)?;
                let cache = layout.forward(&self.params, w.as_flattened(), w.len());
                let (loss, mut dz, dtheta) = self.head_loss(&cache.output, label, self.thresholds());
                dz.iter_mut().for_each(|g| *g *= weight);
                layout.backward(&self.params, &cache, &dz, grads);
                for (g, d) in grads[layout.extra.clone()].iter_mut().zip(dtheta) {
                    *g += weight * d;
                }
                Ok(loss)
            }
            (Network::Mlp(layout), Input::Static(x)) => {
                let cache = layout.forward(&self.params, &self.scale(x)?);
                let (loss, mut dz, _) = self.head_loss(&cache.output, label, &[]);
                dz.iter_mut().for_each(|g| *g *= weight);
                layout.backward(&self.params, &cache, &dz, grads);
                Ok(loss)
            }
            _ => Err(self.wrong_input()),
        }
    }

    /// `(loss, d loss / d output, d loss / d thresholds)`.
    fn head_loss(&self, z: &[f64], y: u32, thresholds: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self.method {
            Method::Pattern | Method::Classification | Method::Laplace | Method::Binomial => {
                let logp = log_softmax(z);
                let onehot;
                let target: &[f64] = match &self.soft {
                    Some(s) => s.for_label(y),
                    None => {
                        onehot = (1..=self.k).map(|i| if i == y { 1.0 } else { 0.0 }).collect::<Vec<_>>();
                        &onehot
                    }
                };
                let loss = -target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>();
                let dz = logp.iter().zip(target).map(|(l, t)| l.exp() - t).collect();
                (loss, dz, Vec::new())
            }
            Method::NnRank => {
                let target = heads::nnrank_target(y, self.k);
                let loss = z
                    .iter()
                    .zip(&target)
                    .map(|(&zi, &t)| zi.max(0.0) + (-zi.abs()).exp().ln_1p() - t * zi)
                    .sum();
                let dz = z.iter().zip(&target).map(|(&zi, &t)| heads::sigmoid(zi) - t).collect();
                (loss, dz, Vec::new())
            }
            Method::Regression => {
                let diff = z[0] - y as f64;
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (diff.abs(), vec![sign], Vec::new())
            }
            Method::RedSvm => {
                let loss = heads::redsvm_loss(z[0], thresholds, y);
                let (dg, dtheta) = heads::redsvm_loss_grad(z[0], thresholds, y);
                (loss, vec![dg], dtheta)
            }
        }
    }
}

/// Draws class-balanced examples: a label uniformly, then an example of
/// that label uniformly.
#[derive(Debug, Clone)]
pub struct ClassUniformSampler {
    by_class: Vec<Vec<usize>>,
}

impl ClassUniformSampler {
    pub fn new(labels: &[u32], k: u32) -> Result<Self, ModelError> {
        let mut by_class = vec![Vec::new(); k as usize];
        for (i, &y) in labels.iter().enumerate() {
            if y < 1 || y > k {
                return Err(ModelError::LabelOutOfRange { label: y, k });
            }
            by_class[y as usize - 1].push(i);
        }
        if let Some(missing) = by_class.iter().position(Vec::is_empty) {
            return Err(ModelError::MissingClass(missing as u32 + 1));
        }
        Ok(Self { by_class })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let class = &self.by_class[rng.gen_range(0..self.by_class.len())];
        class[rng.gen_range(0..class.len())]
    }
}

/// Trains a fresh model of `method` on `examples`.
///
/// Each optimizer step draws `batch_size` class-balanced examples; sequence
/// examples contribute one random contiguous window of `encoder.window`
/// rows (the whole sequence when shorter). There are
/// `ceil(examples / batch_size)` steps per epoch and the final-epoch model
/// is returned.
pub fn train(
    examples: &[TrainExample<'_>],
    method: Method,
    k: u32,
    config: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<Model, ModelError> {
    config.validate()?;
    let mut model = Model::new(method, k, encoder, config.seed)?;
    let labels: Vec<u32> = examples.iter().map(|e| e.label).collect();
    let sampler = ClassUniformSampler::new(&labels, k)?;

    for e in examples {
        match (method, e.input) {
            (Method::Pattern, Input::Static(_)) => {}
            (Method::Pattern, Input::Window(_)) | (_, Input::Static(_)) => return Err(model.wrong_input()),
            (_, Input::Window(w)) => model.check_window(w)?,
        }
    }
    if method == Method::Pattern {
        let rows: Vec<&[f64]> = examples
            .iter()
            .map(|e| match e.input {
                Input::Static(x) => x,
                Input::Window(_) => unreachable!("checked above"),
            })
            .collect();
        model.standardizer = Some(Standardizer::fit(&rows));
    }

    let lr = config.lr.learning_rate(examples.len());
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let mut optimizer = AdamW::new(model.params.len(), config.weight_decay);
    let mut rng = substream(config.seed, "train", 0);
    let mut grads = vec![0.0; model.params.len()];
    let weight = 1.0 / config.batch_size as f64;
    let window = encoder.window;

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            grads.fill(0.0);
            let mut batch_loss = 0.0;
            for _ in 0..config.batch_size {
                let example = &examples[sampler.draw(&mut rng)];
                let input = match example.input {
                    Input::Window(rows) if rows.len() > window => {
                        let start = rng.gen_range(0..=rows.len() - window);
                        Input::Window(&rows[start..start + window])
                    }
                    other => other,
                };
                batch_loss += model.accumulate_grad(input, example.label, weight, &mut grads)? * weight;
            }
            let global_step = epoch * steps_per_epoch + step;
            if !batch_loss.is_finite() {
                return Err(ModelError::DivergedLoss { step: global_step });
            }
            optimizer.step(&mut model.params, &grads, lr);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(ModelError::DivergedLoss { step: global_step });
            }
            epoch_loss += batch_loss;
        }
        model.loss_history.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(model)
}

/// Trains on `(sequence, pooled label)` pairs.
pub fn train_sequences(
    data: &[(&FeatureSequence, u32)],
    method: Method,
    k: u32,
    config: &TrainConfig,
    encoder: &EncoderConfig,
) -> Result<Model, ModelError> {
    let examples: Vec<TrainExample<'_>> = data
        .iter()
        .map(|(seq, label)| TrainExample {
            input: Input::Window(&seq.rows),
            label: *label,
        })
        .collect();
    train(&examples, method, k, config, encoder)
}

/// Trains the PATTERN baseline on `(static statistics, pooled label)` pairs.
pub fn pattern_train(data: &[(&[f64], u32)], k: u32, config: &TrainConfig) -> Result<Model, ModelError> {
    let examples: Vec<TrainExample<'_>> = data
        .iter()
        .map(|(x, label)| TrainExample {
            input: Input::Static(x),
            label: *label,
        })
        .collect();
    train(&examples, Method::Pattern, k, config, &EncoderConfig::default())
}
