//! Domain types shared by every layer: observed series, score series,
//! injected-outlier labels, window sizes, z-score normalization and
//! sliding-window pair extraction.
//!
//! Time is an integer index with unit spacing. Element `i` of a series sits at
//! time `start + i`.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::ops::Range;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Integer time index.
pub type TimeIndex = i64;

/// An ordered, uniformly indexed sequence of `D`-dimensional finite observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    start: TimeIndex,
    values: Array2<f64>,
}

fn check_finite(values: &Array2<f64>) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(position) => Err(Error::NonFinite { position }),
        None => Ok(()),
    }
}

impl TimeSeries {
    /// Builds a series from a `T x D` matrix. Rejects `D = 0` and non-finite values.
    pub fn new(start: TimeIndex, values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("series dimension must be >= 1".into()));
        }
        check_finite(&values)?;
        Ok(Self { start, values })
    }

    pub fn univariate(start: TimeIndex, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        let values = Array2::from_shape_vec((n, 1), values).expect("column shape");
        Self::new(start, values)
    }

    pub fn from_rows(start: TimeIndex, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape {
                expected: format!("{dim} columns"),
                actual: format!("{} columns", bad.len()),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), dim), flat).expect("row shape");
        Self::new(start, values)
    }

    pub fn start(&self) -> TimeIndex {
        self.start
    }

    /// Time index of the last element, or `start - 1` when empty.
    pub fn end(&self) -> TimeIndex {
        self.start + self.len() as TimeIndex - 1
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn time_of(&self, position: usize) -> TimeIndex {
        self.start + position as TimeIndex
    }

    pub fn position_of(&self, t: TimeIndex) -> Option<usize> {
        let offset = t - self.start;
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn get(&self, t: TimeIndex, dim: usize) -> Option<f64> {
        self.position_of(t).map(|p| self.values[[p, dim]])
    }

    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.values.column(dim).to_vec()
    }

    /// Sub-series by element positions.
    pub fn slice(&self, positions: Range<usize>) -> Result<TimeSeries> {
        if positions.start > positions.end || positions.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {positions:?} outside series of length {}",
                self.len()
            )));
        }
        Ok(TimeSeries {
            start: self.time_of(positions.start),
            values: self.values.slice(s![positions, ..]).to_owned(),
        })
    }

    /// Sub-series covering time indices `first..=last`.
    pub fn slice_time(&self, first: TimeIndex, last: TimeIndex) -> Result<TimeSeries> {
        let (a, b) = (self.position_of(first), self.position_of(last));
        match (a, b) {
            (Some(a), Some(b)) if a <= b => self.slice(a..b + 1),
            _ => Err(Error::InvalidArgument(format!(
                "time range {first}..={last} outside series {}..={}",
                self.start,
                self.end()
            ))),
        }
    }

    /// The last `n` observations.
    pub fn tail(&self, n: usize) -> Result<TimeSeries> {
        if n > self.len() {
            return Err(Error::TooShort {
                needed: n,
                actual: self.len(),
            });
        }
        self.slice(self.len() - n..self.len())
    }
}

/// Where a score value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Absolute residual of the detection model against a real observation.
    Observed,
    /// Output of the score forecaster.
    Forecast,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Observed => "obs",
            Provenance::Forecast => "pred",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "obs" => Some(Provenance::Observed),
            "pred" => Some(Provenance::Forecast),
            _ => None,
        }
    }
}

/// Per-dimension outlier scores aligned to a time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    start: TimeIndex,
    values: Array2<f64>,
    provenance: Vec<Provenance>,
}

impl ScoreSeries {
    pub fn new(start: TimeIndex, values: Array2<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidArgument("score dimension must be >= 1".into()));
        }
        if provenance.len() != values.nrows() {
            return Err(Error::Shape {
                expected: format!("{} provenance flags", values.nrows()),
                actual: provenance.len().to_string(),
            });
        }
        check_finite(&values)?;
        for (row, p) in values.rows().into_iter().zip(&provenance) {
            if *p == Provenance::Observed && row.iter().any(|&v| v < 0.0) {
                return Err(Error::Data("observed outlier scores must be nonnegative".into()));
            }
        }
        Ok(Self {
            start,
            values,
            provenance,
        })
    }

    pub fn observed(start: TimeIndex, values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(start, values, vec![Provenance::Observed; n])
    }

    pub fn forecast(start: TimeIndex, values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(start, values, vec![Provenance::Forecast; n])
    }

    pub fn start(&self) -> TimeIndex {
        self.start
    }

    pub fn end(&self) -> TimeIndex {
        self.start + self.len() as TimeIndex - 1
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn position_of(&self, t: TimeIndex) -> Option<usize> {
        let offset = t - self.start;
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn get(&self, t: TimeIndex, dim: usize) -> Option<f64> {
        self.position_of(t).map(|p| self.values[[p, dim]])
    }

    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.values.column(dim).to_vec()
    }

    pub fn slice_time(&self, first: TimeIndex, last: TimeIndex) -> Result<ScoreSeries> {
        match (self.position_of(first), self.position_of(last)) {
            (Some(a), Some(b)) if a <= b => Ok(ScoreSeries {
                start: first,
                values: self.values.slice(s![a..=b, ..]).to_owned(),
                provenance: self.provenance[a..=b].to_vec(),
            }),
            _ => Err(Error::InvalidArgument(format!(
                "time range {first}..={last} outside scores {}..={}",
                self.start,
                self.end()
            ))),
        }
    }

    /// Scores up to and including time `t`.
    pub fn up_to(&self, t: TimeIndex) -> Result<ScoreSeries> {
        self.slice_time(self.start, t)
    }

    /// Views the scores as a plain series (for model training).
    pub fn to_series(&self) -> TimeSeries {
        TimeSeries {
            start: self.start,
            values: self.values.clone(),
        }
    }

    /// Appends `other`, which must start right after `self` ends.
    pub fn concat(&self, other: &ScoreSeries) -> Result<ScoreSeries> {
        if other.start != self.end() + 1 || other.dim() != self.dim() {
            return Err(Error::InvalidArgument(
                "score series are not contiguous or differ in dimension".into(),
            ));
        }
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .expect("matching columns");
        let mut provenance = self.provenance.clone();
        provenance.extend_from_slice(&other.provenance);
        Ok(ScoreSeries {
            start: self.start,
            values,
            provenance,
        })
    }
}

/// Ground-truth injected-outlier time indices, one set per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    dims: Vec<BTreeSet<TimeIndex>>,
}

impl LabelSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dims: vec![BTreeSet::new(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn insert(&mut self, dim: usize, t: TimeIndex) {
        if dim >= self.dims.len() {
            self.dims.resize(dim + 1, BTreeSet::new());
        }
        self.dims[dim].insert(t);
    }

    pub fn contains(&self, dim: usize, t: TimeIndex) -> bool {
        self.dims.get(dim).is_some_and(|d| d.contains(&t))
    }

    pub fn indices(&self, dim: usize) -> &BTreeSet<TimeIndex> {
        &self.dims[dim]
    }

    pub fn total(&self) -> usize {
        self.dims.iter().map(BTreeSet::len).sum()
    }

    /// `(dim, t)` pairs in dimension-then-time order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, TimeIndex)> + '_ {
        self.dims
            .iter()
            .enumerate()
            .flat_map(|(j, set)| set.iter().map(move |&t| (j, t)))
    }

    /// Checks every label lies within `first..=last`.
    pub fn validate_range(&self, first: TimeIndex, last: TimeIndex) -> Result<()> {
        match self.iter().find(|&(_, t)| t < first || t > last) {
            Some((j, t)) => Err(Error::Data(format!(
                "label (dim {}, t {t}) outside series range {first}..={last}",
                j + 1
            ))),
            None => Ok(()),
        }
    }
}

/// Number of past steps a forecaster consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window(NonZeroUsize);

impl Window {
    pub fn new(size: usize) -> Result<Self> {
        NonZeroUsize::new(size)
            .map(Window)
            .ok_or_else(|| Error::InvalidArgument("window size must be >= 1".into()))
    }

    pub fn size(self) -> usize {
        self.0.get()
    }
}

/// Per-dimension z-score statistics (population std).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    pub fn fit(series: &TimeSeries) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidArgument("cannot normalize an empty series".into()));
        }
        let n = series.len() as f64;
        let mean = series.values.sum_axis(Axis(0)) / n;
        let mut var = Array1::zeros(series.dim());
        for row in series.values.rows() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
        let std = (var / n).mapv(f64::sqrt);
        Ok(Self { mean, std })
    }

    /// Divisor for dimension `j`; 1 when the dimension is constant.
    pub fn scale(&self, j: usize) -> f64 {
        if self.std[j] > 0.0 {
            self.std[j]
        } else {
            1.0
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut values = series.values.clone();
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.scale(j));
            col.mapv_inplace(|v| (v - m) / s);
        }
        TimeSeries::new(series.start, values)
    }

    pub fn invert(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut values = series.values.clone();
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.scale(j));
            col.mapv_inplace(|v| v * s + m);
        }
        TimeSeries::new(series.start, values)
    }

    fn check_dim(&self, series: &TimeSeries) -> Result<()> {
        if series.dim() != self.dim() {
            return Err(Error::Shape {
                expected: format!("{} dimensions", self.dim()),
                actual: series.dim().to_string(),
            });
        }
        Ok(())
    }
}

/// Z-scores each dimension. Zero-variance dimensions are shifted to 0 and left unscaled.
pub fn zscore_normalize(series: &TimeSeries) -> Result<(TimeSeries, Normalizer)> {
    let stats = Normalizer::fit(series)?;
    Ok((stats.apply(series)?, stats))
}

/// Input blocks and one-step-ahead targets extracted from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedPairs {
    /// `(N, w, D)`.
    pub inputs: Array3<f64>,
    /// `(N, D)`.
    pub targets: Array2<f64>,
    /// Time index of the first target.
    pub first_target: TimeIndex,
}

impl WindowedPairs {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.targets.ncols()
    }
}

pub(crate) fn windows_of(values: ArrayView2<'_, f64>, start: TimeIndex, w: Window) -> Result<WindowedPairs> {
    let (len, dim) = values.dim();
    let w = w.size();
    if len <= w {
        return Err(Error::TooShort {
            needed: w + 1,
            actual: len,
        });
    }
    let n = len - w;
    let mut inputs = Array3::zeros((n, w, dim));
    for i in 0..n {
        inputs.slice_mut(s![i, .., ..]).assign(&values.slice(s![i..i + w, ..]));
    }
    Ok(WindowedPairs {
        inputs,
        targets: values.slice(s![w.., ..]).to_owned(),
        first_target: start + w as TimeIndex,
    })
}

/// All `T - w` (window, next value) pairs in order.
pub fn sliding_windows(series: &TimeSeries, w: Window) -> Result<WindowedPairs> {
    windows_of(series.values(), series.start, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            TimeSeries::univariate(0, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { position: 1 })
        ));
        assert!(TimeSeries::univariate(0, vec![f64::INFINITY]).is_err());
        assert!(TimeSeries::from_rows(0, &[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn zscore_constant_series() {
        let s = TimeSeries::univariate(0, vec![5.0, 5.0, 5.0]).unwrap();
        let (z, stats) = zscore_normalize(&s).unwrap();
        assert_eq!(z.column(0), vec![0.0, 0.0, 0.0]);
        assert_eq!(stats.mean[0], 5.0);
        assert_eq!(stats.std[0], 0.0);
        assert_eq!(stats.invert(&z).unwrap(), s);
    }

    #[test]
    fn zscore_two_points() {
        let s = TimeSeries::univariate(0, vec![0.0, 2.0]).unwrap();
        let (z, stats) = zscore_normalize(&s).unwrap();
        assert_eq!(z.column(0), vec![-1.0, 1.0]);
        assert_eq!((stats.mean[0], stats.std[0]), (1.0, 1.0));
    }

    #[test]
    fn zscore_sine_moments() {
        let s = TimeSeries::univariate(0, (0..1000).map(|t| (t as f64 / 10.0).sin()).collect()).unwrap();
        let (z, _) = zscore_normalize(&s).unwrap();
        let v = z.column(0);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!((std - 1.0).abs() < 1e-9, "{std}");
    }

    #[test]
    fn zscore_empty_is_error() {
        let s = TimeSeries::new(0, Array2::zeros((0, 1))).unwrap();
        assert!(zscore_normalize(&s).is_err());
    }

    #[test]
    fn windows_small() {
        let s = TimeSeries::univariate(10, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = sliding_windows(&s, Window::new(2).unwrap()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.inputs.slice(s![0, .., 0]).to_vec(), vec![1.0, 2.0]);
        assert_eq!(p.inputs.slice(s![1, .., 0]).to_vec(), vec![2.0, 3.0]);
        assert_eq!(p.targets, array![[3.0], [4.0]]);
        assert_eq!(p.first_target, 12);
        assert_eq!(s.get(p.first_target, 0), Some(p.targets[[0, 0]]));
    }

    #[test]
    fn windows_count() {
        let s = TimeSeries::univariate(1, vec![0.5; 500]).unwrap();
        assert_eq!(sliding_windows(&s, Window::new(30).unwrap()).unwrap().len(), 470);
        let short = TimeSeries::univariate(1, vec![0.5; 30]).unwrap();
        assert!(matches!(
            sliding_windows(&short, Window::new(30).unwrap()),
            Err(Error::TooShort { needed: 31, actual: 30 })
        ));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(Window::new(0).is_err());
    }

    #[test]
    fn observed_scores_must_be_nonnegative() {
        assert!(ScoreSeries::observed(0, array![[0.1], [-0.1]]).is_err());
        assert!(ScoreSeries::forecast(0, array![[0.1], [-0.1]]).is_ok());
    }

    #[test]
    fn label_range_check() {
        let mut l = LabelSet::new(2);
        l.insert(0, 5);
        l.insert(1, 12);
        assert!(l.validate_range(1, 12).is_ok());
        assert!(l.validate_range(1, 11).is_err());
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![(0, 5), (1, 12)]);
    }

    #[test]
    fn slicing_keeps_time_index() {
        let s = TimeSeries::univariate(1, (1..=10).map(f64::from).collect()).unwrap();
        let part = s.slice_time(4, 6).unwrap();
        assert_eq!(part.start(), 4);
        assert_eq!(part.column(0), vec![4.0, 5.0, 6.0]);
        assert_eq!(s.tail(2).unwrap().start(), 9);
        assert!(s.slice_time(0, 3).is_err());
    }
}
