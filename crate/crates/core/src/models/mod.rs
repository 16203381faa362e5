//! One-step-ahead forecasters and their training.

mod adam;
mod checkpoint;
mod lstm;
mod ridge;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use lstm::{LstmCache, LstmModel, LstmParams};
pub use ridge::{fit_ridge, RidgeArModel};

use crate::error::{Error, Result};
use crate::seeds::{stream_rng, BATCH_STREAM, INIT_STREAM};
use crate::series::{sliding_windows, TimeSeries, Window, WindowedPairs};

/// A fitted predictor mapping the last `w` observations to the next one.
pub trait Forecaster: Send + Sync {
    fn window(&self) -> Window;

    fn dim(&self) -> usize;

    /// Predicts a batch of windows `(N, w, D)`, returning `(N, D)`.
    fn predict_batch(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>>;

    fn predict_one(&self, recent: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let (w, d) = recent.dim();
        let block = recent
            .to_owned()
            .into_shape_with_order((1, w, d))
            .expect("contiguous block");
        Ok(self.predict_batch(block.view())?.row(0).to_owned())
    }
}

/// Which model family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Ridge {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Lstm {
        hidden: usize,
    },
}

fn default_lambda() -> f64 {
    1e-3
}

/// Gradient-training settings. Ignored by the closed-form ridge model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None`: full batch up to 2000 pairs, otherwise 64.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Initial forget-gate bias of LSTM models.
    pub forget_bias: f64,
    /// Rescale each minibatch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Evaluate the full training loss after every epoch and return the
    /// parameters of the best epoch rather than the last.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: None,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            forget_bias: 1.0,
            clip_norm: None,
            keep_best: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size != Some(0)
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.forget_bias.is_finite()
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings: {self:?}")))
        }
    }

    pub fn effective_batch(&self, pairs: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(pairs),
            None if pairs <= 2000 => pairs,
            None => 64,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// A fitted model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Ridge(RidgeArModel),
    Lstm(LstmModel),
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Ridge(_) => "ridge",
            TrainedModel::Lstm(_) => "lstm",
        }
    }
}

impl Forecaster for TrainedModel {
    fn window(&self) -> Window {
        match self {
            TrainedModel::Ridge(m) => m.window(),
            TrainedModel::Lstm(m) => m.window(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            TrainedModel::Ridge(m) => m.dim(),
            TrainedModel::Lstm(m) => m.dim(),
        }
    }

    fn predict_batch(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        match self {
            TrainedModel::Ridge(m) => m.predict(inputs),
            TrainedModel::Lstm(m) => m.predict(inputs),
        }
    }
}

/// Loss trace of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared error averaged over the minibatches of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean squared error of the final parameters on all training pairs.
    pub final_mse: f64,
}

impl TrainReport {
    pub fn final_rmse(&self) -> f64 {
        self.final_mse.sqrt()
    }
}

fn mse(pred: &Array2<f64>, target: ArrayView2<'_, f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

/// Fits a model on the sliding windows of `series`.
pub fn train(spec: &ModelSpec, series: &TimeSeries, window: Window, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    let pairs = sliding_windows(series, window)?;
    train_pairs(spec, &pairs, config)
}

/// Fits a model on prepared `(window, target)` pairs.
pub fn train_pairs(spec: &ModelSpec, pairs: &WindowedPairs, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::TooShort { needed: 1, actual: 0 });
    }
    match *spec {
        ModelSpec::Ridge { lambda } => {
            let model = fit_ridge(pairs, lambda)?;
            let final_mse = mse(&model.predict(pairs.inputs.view())?, pairs.targets.view());
            Ok((
                TrainedModel::Ridge(model),
                TrainReport {
                    epoch_loss: vec![final_mse],
                    final_mse,
                },
            ))
        }
        ModelSpec::Lstm { hidden } => {
            if hidden == 0 {
                return Err(Error::Config("LSTM hidden size must be >= 1".into()));
            }
            let (model, report) = train_lstm(pairs, hidden, config)?;
            Ok((TrainedModel::Lstm(model), report))
        }
    }
}

fn clip_global_norm(grads: &mut LstmParams, limit: f64) {
    let norm = grads.slices().iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > limit {
        let k = limit / norm;
        for s in grads.slices_mut() {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Minibatch Adam on mean squared error. Initialization draws from stream 0 of
/// `config.seed` and the per-epoch shuffle from stream 1.
pub fn train_lstm(pairs: &WindowedPairs, hidden: usize, config: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    config.validate()?;
    let window = Window::new(pairs.window())?;
    let dim = pairs.dim();
    let mut init_rng = stream_rng(config.seed, INIT_STREAM);
    let mut batch_rng = stream_rng(config.seed, BATCH_STREAM);
    let mut model = LstmModel::init_with_forget_bias(window, dim, hidden, config.forget_bias, &mut init_rng);
    let mut adam = AdamState::new(config.adam(), &model.params.sizes());

    let n = pairs.len();
    let batch = config.effective_batch(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LstmParams)> = None;

    for epoch in 0..config.epochs {
        if batch < n {
            order.shuffle(&mut batch_rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (inputs, targets) = if chunk.len() == n {
                (pairs.inputs.clone(), pairs.targets.clone())
            } else {
                (
                    pairs.inputs.select(Axis(0), chunk),
                    pairs.targets.select(Axis(0), chunk),
                )
            };
            let (pred, cache) = model.forward(inputs.view())?;
            let diff = &pred - &targets;
            total += diff.iter().map(|v| v * v).sum::<f64>();
            let scale = 2.0 / diff.len() as f64;
            let mut grads = model.backward(&cache, (&diff * scale).view())?;
            if let Some(limit) = config.clip_norm {
                clip_global_norm(&mut grads, limit);
            }
            let grad_slices = grads.slices();
            adam.step(&mut model.params.slices_mut(), &grad_slices);
        }
        let loss = total / (n * dim) as f64;
        if !loss.is_finite() || !model.params.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: mse {loss:.6e}");
        epoch_loss.push(loss);
        if config.keep_best {
            let full = mse(&model.predict(pairs.inputs.view())?, pairs.targets.view());
            if full.is_finite() && best.as_ref().is_none_or(|(b, _, _)| full < *b) {
                best = Some((full, epoch, model.params.clone()));
            }
        }
    }
    if let Some((loss, epoch, params)) = best {
        log::debug!("keeping epoch {epoch} (mse {loss:.6e})");
        model.params = params;
    }

    let final_mse = mse(&model.predict(pairs.inputs.view())?, pairs.targets.view());
    if !final_mse.is_finite() {
        return Err(Error::Numerical("non-finite final training loss".into()));
    }
    Ok((model, TrainReport { epoch_loss, final_mse }))
}
