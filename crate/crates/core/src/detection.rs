//! Detection layer: fit `g` on an early segment, then score later
//! observations by their absolute one-step residuals.

use ndarray::{concatenate, Axis};

use crate::error::{Error, Result};
use crate::models::{train, Forecaster, ModelSpec, TrainConfig, TrainReport, TrainedModel};
use crate::series::{windows_of, Normalizer, ScoreSeries, TimeIndex, TimeSeries, Window};

/// Cuts a series into contiguous segments at the given element positions.
///
/// An empty `points` slice means the default two-way split at `⌊T/2⌋`.
pub fn split(series: &TimeSeries, points: &[usize]) -> Result<Vec<TimeSeries>> {
    let default = [series.len() / 2];
    let points = if points.is_empty() { &default[..] } else { points };
    let mut bounds = Vec::with_capacity(points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(points);
    bounds.push(series.len());
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "split points {points:?} must be strictly increasing inside (0, {})",
            series.len()
        )));
    }
    bounds.windows(2).map(|w| series.slice(w[0]..w[1])).collect()
}

/// Absolute residuals of `g` over `segment`, using true observations as
/// inputs. `context` must end right before `segment` starts and hold at least
/// `g.window()` points; only its last `w` points are used.
pub fn score(g: &dyn Forecaster, segment: &TimeSeries, context: &TimeSeries) -> Result<ScoreSeries> {
    let w = g.window().size();
    if context.len() < w {
        return Err(Error::TooShort {
            needed: w,
            actual: context.len(),
        });
    }
    if context.end() + 1 != segment.start() {
        return Err(Error::InvalidArgument(format!(
            "context ends at {} but segment starts at {}",
            context.end(),
            segment.start()
        )));
    }
    if segment.dim() != g.dim() || context.dim() != g.dim() {
        return Err(Error::Shape {
            expected: format!("{} dimensions", g.dim()),
            actual: segment.dim().to_string(),
        });
    }
    let ctx = context.tail(w)?;
    let joined = concatenate(Axis(0), &[ctx.values(), segment.values()]).expect("matching dims");
    let pairs = windows_of(joined.view(), ctx.start(), g.window())?;
    let pred = g.predict_batch(pairs.inputs.view())?;
    let scores = (&pairs.targets - &pred).mapv(f64::abs);
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("detector produced non-finite predictions".into()));
    }
    ScoreSeries::observed(segment.start(), scores)
}

/// A fitted detection model together with the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: TrainedModel,
    pub normalizer: Option<Normalizer>,
    pub report: TrainReport,
    /// Last time index of the training segment.
    pub train_end: TimeIndex,
}

impl Detector {
    /// Fits `g` on `train_segment`, optionally z-scoring with that segment's statistics.
    pub fn fit(spec: &ModelSpec, train_segment: &TimeSeries, window: Window, config: &TrainConfig, normalize: bool) -> Result<Self> {
        let normalizer = normalize.then(|| Normalizer::fit(train_segment)).transpose()?;
        let data = match &normalizer {
            Some(n) => n.apply(train_segment)?,
            None => train_segment.clone(),
        };
        let (model, report) = train(spec, &data, window, config)?;
        Ok(Self {
            model,
            normalizer,
            report,
            train_end: train_segment.end(),
        })
    }

    pub fn from_parts(model: TrainedModel, normalizer: Option<Normalizer>, train_end: TimeIndex) -> Self {
        Self {
            model,
            normalizer,
            report: TrainReport {
                epoch_loss: Vec::new(),
                final_mse: f64::NAN,
            },
            train_end,
        }
    }

    fn prepare(&self, series: &TimeSeries) -> Result<TimeSeries> {
        match &self.normalizer {
            Some(n) => n.apply(series),
            None => Ok(series.clone()),
        }
    }

    /// Scores `segment` in normalized units with context from the preceding points.
    pub fn score(&self, segment: &TimeSeries, context: &TimeSeries) -> Result<ScoreSeries> {
        score(&self.model, &self.prepare(segment)?, &self.prepare(context)?)
    }

    /// Scores every point of `series` after `self.train_end`.
    pub fn score_after_training(&self, series: &TimeSeries) -> Result<DetectionResult> {
        let first = self.train_end + 1;
        let context = series.slice_time(series.start(), self.train_end)?;
        let segment = series.slice_time(first, series.end())?;
        Ok(DetectionResult {
            scores: self.score(&segment, &context)?,
            split_index: self.train_end,
        })
    }
}

/// Observed-residual scores starting right after the detector's training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub scores: ScoreSeries,
    pub split_index: TimeIndex,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::train;
    use ndarray::{Array2, ArrayView3};
    use std::collections::HashMap;

    fn sine(start: TimeIndex, n: usize) -> TimeSeries {
        crate::datagen::gen_sine(start, n, 10.0).unwrap()
    }

    #[test]
    fn default_and_explicit_splits() {
        let s = sine(1, 1500);
        let halves = split(&s, &[]).unwrap();
        assert_eq!(halves.iter().map(TimeSeries::len).collect::<Vec<_>>(), vec![750, 750]);
        let thirds = split(&s, &[500, 1000]).unwrap();
        assert_eq!(thirds.iter().map(TimeSeries::len).collect::<Vec<_>>(), vec![500, 500, 500]);
        assert_eq!(thirds[1].start(), 501);
        let long = sine(1, 11500);
        let parts = split(&long, &[9500, 10500]).unwrap();
        assert_eq!(parts.iter().map(TimeSeries::len).collect::<Vec<_>>(), vec![9500, 1000, 1000]);
        assert!(split(&s, &[1000, 500]).is_err());
        assert!(split(&s, &[1500]).is_err());
        assert!(split(&s, &[0]).is_err());
    }

    /// Looks up the true next value by matching the window bit for bit.
    struct Lookup {
        w: Window,
        table: HashMap<Vec<u64>, f64>,
    }

    impl Lookup {
        fn new(series: &TimeSeries, w: usize) -> Self {
            let v = series.column(0);
            let table = v
                .windows(w + 1)
                .map(|win| (win[..w].iter().map(|x| x.to_bits()).collect(), win[w]))
                .collect();
            Self {
                w: Window::new(w).unwrap(),
                table,
            }
        }
    }

    impl Forecaster for Lookup {
        fn window(&self) -> Window {
            self.w
        }
        fn dim(&self) -> usize {
            1
        }
        fn predict_batch(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((inputs.dim().0, 1), |(i, _)| {
                let key: Vec<u64> = inputs.slice(ndarray::s![i, .., 0]).iter().map(|x| x.to_bits()).collect();
                self.table[&key]
            }))
        }
    }

    #[test]
    fn perfect_forecaster_scores_zero() {
        let s = sine(1, 200);
        let g = Lookup::new(&s, 5);
        let parts = split(&s, &[100]).unwrap();
        let scores = score(&g, &parts[1], &parts[0]).unwrap();
        assert_eq!(scores.start(), 101);
        assert_eq!(scores.len(), 100);
        assert!(scores.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_series_ridge_scores_near_zero() {
        let s = TimeSeries::univariate(1, vec![2.5; 300]).unwrap();
        let parts = split(&s, &[150]).unwrap();
        let det = Detector::fit(
            &ModelSpec::Ridge { lambda: 1e-3 },
            &parts[0],
            Window::new(10).unwrap(),
            &TrainConfig::default(),
            false,
        )
        .unwrap();
        let r = det.score_after_training(&s).unwrap();
        assert_eq!(r.scores.start(), 151);
        assert!(r.scores.values().iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn missing_or_misaligned_context_is_error() {
        let s = sine(1, 200);
        let g = Lookup::new(&s, 5);
        let parts = split(&s, &[100]).unwrap();
        assert!(score(&g, &parts[1], &parts[0].tail(3).unwrap()).is_err());
        assert!(score(&g, &parts[1], &parts[0].slice(0..50).unwrap()).is_err());
    }

    #[test]
    fn spike_stands_out() {
        let mut values = sine(1, 600).column(0);
        values[449] += 0.8; // t = 450
        let s = TimeSeries::univariate(1, values).unwrap();
        let parts = split(&s, &[300]).unwrap();
        let w = Window::new(30).unwrap();
        let (g, _) = train(&ModelSpec::Ridge { lambda: 1e-2 }, &parts[0], w, &TrainConfig::default()).unwrap();
        let scores = score(&g, &parts[1], &parts[0]).unwrap().column(0);
        let spike = scores[449 - 300];
        let mut others: Vec<f64> = scores.iter().enumerate().filter(|&(i, _)| i != 149).map(|(_, &v)| v).collect();
        others.sort_by(f64::total_cmp);
        let p99 = others[(others.len() as f64 * 0.99) as usize];
        assert!(spike > p99, "{spike} vs {p99}");
    }

    #[test]
    fn scores_do_not_depend_on_future_observations() {
        let s = sine(1, 300);
        let parts = split(&s, &[150]).unwrap();
        let w = Window::new(20).unwrap();
        let (g, _) = train(&ModelSpec::Ridge { lambda: 1e-2 }, &parts[0], w, &TrainConfig::default()).unwrap();
        let base = score(&g, &parts[1], &parts[0]).unwrap();
        let mut perturbed = s.column(0);
        perturbed[250] += 5.0; // t = 251
        let p = TimeSeries::univariate(1, perturbed).unwrap();
        let pp = split(&p, &[150]).unwrap();
        let other = score(&g, &pp[1], &pp[0]).unwrap();
        for t in 151..=250 {
            assert_eq!(base.get(t, 0), other.get(t, 0));
        }
        assert_ne!(base.get(251, 0), other.get(251, 0));
    }
}
