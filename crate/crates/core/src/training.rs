//! Small encoders, optimizers and the contrastive training loop.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::loss_and_grad;
use crate::error::{Error, Result};
use crate::geometry::{normalize, Matrix, UnitEmbedding};
use crate::losses::{LossSpec, ViewBatch};
use crate::rng::{substream, StreamRng};
use crate::summation::compensated_sum;
use crate::worldmodel::World;

/// `x -> W_L tanh(... tanh(W_1 x))`, with one or two layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    layers: Vec<Matrix>,
}

impl EncoderParams {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() || layers.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "encoder needs one or two layers, got {}",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].rows(),
                    got: pair[1].cols(),
                });
            }
        }
        let out = layers.last().map_or(0, Matrix::rows);
        if out < 2 {
            return Err(Error::Dimension(out));
        }
        if layers.iter().any(|w| w.as_slice().iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("encoder weights must be finite".into()));
        }
        Ok(Self { layers })
    }

    /// Single linear layer.
    pub fn linear(w: Matrix) -> Result<Self> {
        Self::new(vec![w])
    }

    /// Gaussian initialisation with variance `1 / fan_in`.
    pub fn random(
        input_dim: usize,
        output_dim: usize,
        hidden: Option<usize>,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut shapes = Vec::new();
        match hidden {
            Some(h) => {
                shapes.push((h, input_dim));
                shapes.push((output_dim, h));
            }
            None => shapes.push((output_dim, input_dim)),
        }
        let layers = shapes
            .into_iter()
            .map(|(rows, cols)| {
                let scale = 1.0 / (cols as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| scale * { let z: f64 = StandardNormal.sample(rng); z })
                    .collect::<Vec<f64>>();
                Matrix::from_vec(rows, cols, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// All weights, layer by layer in row-major order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }

    /// Same shapes as `self`, filled from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|w| {
                let n = w.rows() * w.cols();
                let m = Matrix::from_vec(w.rows(), w.cols(), flat[offset..offset + n].to_vec());
                offset += n;
                m
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    /// Activations `[x, h_1, ..., output]`; every layer but the last is
    /// followed by `tanh`.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, w) in self.layers.iter().enumerate() {
            let mut z = w.matvec(&acts[i]);
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Normalised representation of one input.
    pub fn embed(&self, x: &[f64]) -> Result<UnitEmbedding> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let acts = self.forward(x);
        normalize(&acts[acts.len() - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum,
    #[default]
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "momentum" => Ok(Self::Momentum),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Parse(format!("unknown optimizer '{other}'"))),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Momentum => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = MOMENTUM * *v + g;
                    *p -= self.lr * *v;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Number of anchors in the training set.
    pub dataset_size: usize,
    pub output_dim: usize,
    pub hidden: Option<usize>,
    /// Record wall-clock time per epoch; off keeps logs reproducible.
    pub record_time: bool,
}

impl TrainConfig {
    pub fn new(loss: LossSpec, seed: u64) -> Self {
        Self {
            loss,
            batch_size: 64,
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed,
            dataset_size: 1024,
            output_dim: 16,
            hidden: None,
            record_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.dataset_size < self.batch_size {
            return Err(Error::BatchTooSmall(self.dataset_size));
        }
        if self.output_dim < 2 {
            return Err(Error::Dimension(self.output_dim));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub initial_loss: f64,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }
}

// Substream layout under the master seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATASET: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 1 << 32;

/// Latent class of every training anchor.
pub fn sample_dataset<W: World + ?Sized>(world: &W, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, STREAM_DATASET);
    (0..size).map(|_| world.draw_class(&mut rng)).collect()
}

/// One epoch of batches: a seeded permutation cut into full batches of `B`
/// anchors, each anchor carrying two views plus `M - 1` extra positives.
pub fn make_batches<W: World + ?Sized>(
    dataset: &[usize],
    batch_size: usize,
    positives: usize,
    world: &W,
    rng: &mut StreamRng,
) -> Result<Vec<ViewBatch<Vec<f64>>>> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }
    if dataset.len() < batch_size {
        return Err(Error::BatchTooSmall(dataset.len()));
    }
    if positives == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let batches = order
        .chunks_exact(batch_size)
        .map(|chunk| {
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset[i]).collect();
            let first = labels.iter().map(|&c| world.draw_view(c, rng)).collect();
            let second = labels.iter().map(|&c| world.draw_view(c, rng)).collect();
            let extra = labels
                .iter()
                .map(|&c| (1..positives).map(|_| world.draw_view(c, rng)).collect())
                .collect();
            ViewBatch {
                first,
                second,
                extra,
                labels,
            }
        })
        .collect();
    Ok(batches)
}

/// Batches used in `epoch` (zero based) of a run with this config.
pub fn epoch_batches<W: World + ?Sized>(
    config: &TrainConfig,
    world: &W,
    dataset: &[usize],
    epoch: usize,
) -> Result<Vec<ViewBatch<Vec<f64>>>> {
    let mut rng = substream(config.seed, STREAM_EPOCH_BASE + epoch as u64);
    make_batches(dataset, config.batch_size, config.loss.positives, world, &mut rng)
}

/// Initial parameters of a run with this config.
pub fn initial_params<W: World + ?Sized>(config: &TrainConfig, world: &W) -> Result<EncoderParams> {
    let mut rng = substream(config.seed, STREAM_INIT);
    EncoderParams::random(world.input_dim(), config.output_dim, config.hidden, &mut rng)
}

/// Trains from [`initial_params`] and returns the final parameters and a
/// per-epoch log of mean batch losses.
pub fn train<W: World + ?Sized>(config: &TrainConfig, world: &W) -> Result<(EncoderParams, TrainingLog)> {
    config.validate()?;
    let params = initial_params(config, world)?;
    train_from(config, world, params)
}

pub fn train_from<W: World + ?Sized>(
    config: &TrainConfig,
    world: &W,
    mut params: EncoderParams,
) -> Result<(EncoderParams, TrainingLog)> {
    config.validate()?;
    let dataset = sample_dataset(world, config.dataset_size, config.seed);
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, flat.len());
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let batches = epoch_batches(config, world, &dataset, epoch)?;
        let mut losses = Vec::with_capacity(batches.len());
        for (step, batch) in batches.iter().enumerate() {
            // an encoder output that overflows or collapses cannot be normalised
            let (loss, grad) = match loss_and_grad(&params, batch, &config.loss) {
                Err(Error::ZeroVector) => return Err(Error::DivergenceDetected { epoch, step }),
                other => other?,
            };
            let grad = grad.flatten();
            if !loss.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergenceDetected { epoch, step });
            }
            if epoch == 0 && step == 0 {
                log.initial_loss = loss.value;
            }
            losses.push(loss.value);
            opt.step(&mut flat, &grad);
            if flat.iter().any(|p| !p.is_finite()) {
                return Err(Error::DivergenceDetected { epoch, step });
            }
            params = params.with_flat(&flat)?;
        }
        let wall_ms = if config.record_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        log.epochs.push(EpochRecord {
            epoch,
            loss: compensated_sum(losses.iter().copied()) / losses.len() as f64,
            wall_ms,
        });
    }
    Ok((params, log))
}

/// Labelled normalised representations of fresh draws from `world`.
pub fn encode_samples<W: World + ?Sized>(
    params: &EncoderParams,
    world: &W,
    count: usize,
    rng: &mut StreamRng,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut reps = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let c = world.draw_class(rng);
        let x = world.draw_view(c, rng);
        reps.push(params.embed(&x)?.into_inner());
        labels.push(c);
    }
    Ok((reps, labels))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub params: EncoderParams,
    /// Objective the parameters were trained with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, config_hash: impl Into<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            params,
            loss: None,
        }
    }

    pub fn with_loss(mut self, loss: LossSpec) -> Self {
        self.loss = Some(loss);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "checkpoint version {} is not {CHECKPOINT_VERSION}",
                ck.version
            )));
        }
        // re-validate shapes and finiteness
        let params = EncoderParams::new(ck.params.layers)?;
        Ok(Self { params, ..ck })
    }
}
