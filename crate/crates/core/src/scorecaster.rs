//! Score prediction layer: fit `f` on observed scores and roll it forward.
//!
//! Rollouts are recursive: each one-step prediction is appended to the input
//! window as if it had been observed. The raw prediction is what gets fed back;
//! the emitted forecast is clamped at zero.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Zip};

use crate::error::{Error, Result};
use crate::models::{train, Forecaster, ModelSpec, TrainConfig, TrainReport, TrainedModel};
use crate::series::{Normalizer, ScoreSeries, TimeIndex, Window};

/// The score model `f`, optionally working on z-scored scores.
///
/// Inputs and outputs are always in score units; the standardization is
/// internal, so rollouts feed back and clamp score-unit values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub model: TrainedModel,
    pub normalizer: Option<Normalizer>,
}

impl Forecaster for ScoreModel {
    fn window(&self) -> Window {
        self.model.window()
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn predict_batch(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let Some(n) = &self.normalizer else {
            return self.model.predict_batch(inputs);
        };
        let mut z = inputs.to_owned();
        for (j, mut lane) in z.axis_iter_mut(ndarray::Axis(2)).enumerate() {
            let (m, sc) = (n.mean[j], n.scale(j));
            lane.mapv_inplace(|v| (v - m) / sc);
        }
        let mut out = self.model.predict_batch(z.view())?;
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, sc) = (n.mean[j], n.scale(j));
            Zip::from(&mut col).for_each(|v| *v = *v * sc + m);
        }
        Ok(out)
    }
}

/// Fits the score model on sliding windows of `scores`, z-scoring them with
/// their own statistics first when `standardize` is set.
pub fn fit_score_model(
    spec: &ModelSpec,
    scores: &ScoreSeries,
    window: Window,
    config: &TrainConfig,
    standardize: bool,
) -> Result<(ScoreModel, TrainReport)> {
    let series = scores.to_series();
    let normalizer = standardize.then(|| Normalizer::fit(&series)).transpose()?;
    let data = match &normalizer {
        Some(n) => n.apply(&series)?,
        None => series,
    };
    let (model, report) = train(spec, &data, window, config)?;
    Ok((ScoreModel { model, normalizer }, report))
}

/// Forecasts for `anchor + 1 ..= anchor + horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub anchor: TimeIndex,
    pub forecasts: ScoreSeries,
}

impl ForecastRun {
    pub fn horizon(&self) -> usize {
        self.forecasts.len()
    }
}

fn check_history(f: &dyn Forecaster, observed: &ScoreSeries, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if observed.dim() != f.dim() {
        return Err(Error::Shape {
            expected: format!("{} score dimensions", f.dim()),
            actual: observed.dim().to_string(),
        });
    }
    if observed.len() < f.window().size() {
        return Err(Error::TooShort {
            needed: f.window().size(),
            actual: observed.len(),
        });
    }
    Ok(())
}

/// Recursive rollouts from several anchors at once.
///
/// Each anchor `τ` sees only `observed` up to and including `τ`. Returns
/// clamped forecasts shaped `(anchors, horizon, D)`.
pub fn forecast_many(f: &dyn Forecaster, observed: &ScoreSeries, anchors: &[TimeIndex], horizon: usize) -> Result<Array3<f64>> {
    check_history(f, observed, horizon)?;
    let w = f.window().size();
    let d = f.dim();
    let mut history = Array3::zeros((anchors.len(), w + horizon, d));
    for (a, &tau) in anchors.iter().enumerate() {
        let end = observed.position_of(tau).ok_or_else(|| {
            Error::InvalidArgument(format!("anchor {tau} outside observed scores {}..={}", observed.start(), observed.end()))
        })?;
        if end + 1 < w {
            return Err(Error::TooShort {
                needed: w,
                actual: end + 1,
            });
        }
        history
            .slice_mut(s![a, ..w, ..])
            .assign(&observed.values().slice(s![end + 1 - w..=end, ..]));
    }
    let mut out = Array3::zeros((anchors.len(), horizon, d));
    for k in 0..horizon {
        let pred = f.predict_batch(history.slice(s![.., k..k + w, ..]))?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score forecast at step {}", k + 1)));
        }
        history.slice_mut(s![.., w + k, ..]).assign(&pred);
        out.slice_mut(s![.., k, ..]).assign(&pred.mapv(|v| v.max(0.0)));
    }
    Ok(out)
}

/// Rolls `f` forward `horizon` steps past the end of `observed`.
pub fn forecast(f: &dyn Forecaster, observed: &ScoreSeries, horizon: usize) -> Result<ForecastRun> {
    let anchor = observed.end();
    let out = forecast_many(f, observed, &[anchor], horizon)?;
    let values: Array2<f64> = out.slice(s![0, .., ..]).to_owned();
    Ok(ForecastRun {
        anchor,
        forecasts: ScoreSeries::forecast(anchor + 1, values)?,
    })
}

/// Only step `k` of the rollout.
pub fn forecast_at_horizon(f: &dyn Forecaster, observed: &ScoreSeries, k: usize) -> Result<Array1<f64>> {
    let run = forecast(f, observed, k)?;
    Ok(run.forecasts.values().row(k - 1).to_owned())
}
