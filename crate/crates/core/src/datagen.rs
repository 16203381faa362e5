//! Synthetic generators, outlier injection and the PM2.5 CSV loader.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{stream_rng, DATA_STREAM};
use crate::series::{LabelSet, Normalizer, TimeIndex, TimeSeries};

/// `x_t = sin(t / scale)` for `t = start .. start + length`.
pub fn gen_sine(start: TimeIndex, length: usize, scale: f64) -> Result<TimeSeries> {
    TimeSeries::univariate(
        start,
        (0..length).map(|i| ((start + i as TimeIndex) as f64 / scale).sin()).collect(),
    )
}

/// `(sin(t / scale), cos(t / scale))`.
pub fn gen_sincos(start: TimeIndex, length: usize, scale: f64) -> Result<TimeSeries> {
    let values = Array2::from_shape_fn((length, 2), |(i, j)| {
        let x = (start + i as TimeIndex) as f64 / scale;
        if j == 0 {
            x.sin()
        } else {
            x.cos()
        }
    });
    TimeSeries::new(start, values)
}

/// Additive Gaussian perturbation. The second parameter is a standard deviation.
///
/// With `random_sign` the mean is `+mean` or `-mean` with equal probability.
/// With `relative` both parameters are multiples of the standard deviation of
/// the affected dimension over the whole series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub random_sign: bool,
    #[serde(default)]
    pub relative: bool,
}

impl NoiseSpec {
    pub fn gaussian(mean: f64, std: f64) -> Self {
        Self {
            mean,
            std,
            random_sign: false,
            relative: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.std >= 0.0 && self.std.is_finite() && self.mean.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise parameters {self:?}")))
        }
    }

    fn resolve(&self, dim_std: f64) -> (f64, f64) {
        if self.relative {
            (self.mean * dim_std, self.std * dim_std)
        } else {
            (self.mean, self.std)
        }
    }

    fn draw(&self, dim_std: f64, rng: &mut ChaCha8Rng) -> f64 {
        let (mean, std) = self.resolve(dim_std);
        let sign = if self.random_sign && rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let z: f64 = StandardNormal.sample(rng);
        sign * mean + std * z
    }
}

/// How many cause events to place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventCount {
    Count(usize),
    /// Fraction of the series length, rounded to the nearest integer.
    Rate(f64),
}

/// Declarative outlier injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InjectionSpec {
    None,
    /// Perturb every dimension at each positive multiple of `period`.
    Periodic { period: usize, noise: NoiseSpec },
    /// Perturb `source_dim` at random times `τ` and `target_dim` at `τ + lag`.
    /// Dimensions are 1-based.
    DelayedPair {
        /// Exactly one of `count` and `rate`.
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        rate: Option<f64>,
        lag: usize,
        source_dim: usize,
        target_dim: usize,
        noise: NoiseSpec,
        /// Minimum gap between cause events; defaults to `lag + 1`.
        #[serde(default)]
        min_separation: Option<usize>,
    },
}

/// A series with injected outliers and the ground truth needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub series: TimeSeries,
    pub clean: TimeSeries,
    pub labels: LabelSet,
    pub seed: u64,
}

fn dim_stds(series: &TimeSeries) -> Result<Vec<f64>> {
    Ok(Normalizer::fit(series)?.std.to_vec())
}

/// Adds noise at `t = period, 2·period, …` within the series range, in every dimension.
pub fn inject_periodic(series: &TimeSeries, period: usize, noise: &NoiseSpec, seed: u64) -> Result<GeneratedDataset> {
    if period == 0 {
        return Err(Error::Config("injection period must be >= 1".into()));
    }
    noise.validate()?;
    let stds = if noise.relative { dim_stds(series)? } else { vec![1.0; series.dim()] };
    let mut rng = stream_rng(seed, DATA_STREAM);
    let mut values = series.values().to_owned();
    let mut labels = LabelSet::new(series.dim());
    let p = period as TimeIndex;
    let first = (series.start().max(1) + p - 1) / p * p;
    for t in (first..=series.end()).step_by(period) {
        let pos = series.position_of(t).expect("in range");
        for (j, std) in stds.iter().enumerate() {
            values[[pos, j]] += noise.draw(*std, &mut rng);
            labels.insert(j, t);
        }
    }
    Ok(GeneratedDataset {
        series: TimeSeries::new(series.start(), values)?,
        clean: series.clone(),
        labels,
        seed,
    })
}

/// Cause-and-effect injection across two dimensions (0-based `source`/`target`).
///
/// Cause times are drawn uniformly without replacement from the positions
/// where `τ + lag` is still inside the series, keeping at least
/// `min_separation` steps between any two causes.
#[allow(clippy::too_many_arguments)]
pub fn inject_delayed_pair(
    series: &TimeSeries,
    events: EventCount,
    lag: usize,
    source: usize,
    target: usize,
    noise: &NoiseSpec,
    min_separation: Option<usize>,
    seed: u64,
) -> Result<GeneratedDataset> {
    noise.validate()?;
    if source >= series.dim() || target >= series.dim() {
        return Err(Error::Config(format!(
            "injection dimensions {} and {} outside a {}-dimensional series",
            source + 1,
            target + 1,
            series.dim()
        )));
    }
    if lag >= series.len() {
        return Err(Error::Config(format!("lag {lag} must be shorter than the series")));
    }
    let count = match events {
        EventCount::Count(n) => n,
        EventCount::Rate(r) if (0.0..=1.0).contains(&r) => (r * series.len() as f64).round() as usize,
        EventCount::Rate(r) => return Err(Error::Config(format!("injection rate {r} outside [0, 1]"))),
    };
    let separation = min_separation.unwrap_or(lag + 1).max(1);
    let admissible = series.len() - lag;
    let capacity = admissible.div_ceil(separation);
    if count > admissible || count > capacity {
        return Err(Error::Config(format!(
            "cannot place {count} events in {admissible} admissible positions with separation {separation}"
        )));
    }

    let mut rng = stream_rng(seed, DATA_STREAM);
    let mut chosen = BTreeSet::new();
    let max_attempts = 1000 * count.max(1);
    let mut attempts = 0;
    while chosen.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "could not place {count} separated events after {max_attempts} draws"
            )));
        }
        let pos = rng.random_range(0..admissible);
        let lo = pos.saturating_sub(separation - 1);
        if chosen.range(lo..pos + separation).next().is_none() {
            chosen.insert(pos);
        }
    }

    let stds = if noise.relative { dim_stds(series)? } else { vec![1.0; series.dim()] };
    let mut values = series.values().to_owned();
    let mut labels = LabelSet::new(series.dim());
    for &pos in &chosen {
        values[[pos, source]] += noise.draw(stds[source], &mut rng);
        values[[pos + lag, target]] += noise.draw(stds[target], &mut rng);
        labels.insert(source, series.time_of(pos));
        labels.insert(target, series.time_of(pos + lag));
    }
    Ok(GeneratedDataset {
        series: TimeSeries::new(series.start(), values)?,
        clean: series.clone(),
        labels,
        seed,
    })
}

/// Applies an [`InjectionSpec`] to a clean series.
pub fn inject(series: &TimeSeries, spec: &InjectionSpec, seed: u64) -> Result<GeneratedDataset> {
    match spec {
        InjectionSpec::None => Ok(GeneratedDataset {
            series: series.clone(),
            clean: series.clone(),
            labels: LabelSet::new(series.dim()),
            seed,
        }),
        InjectionSpec::Periodic { period, noise } => inject_periodic(series, *period, noise, seed),
        InjectionSpec::DelayedPair {
            count,
            rate,
            lag,
            source_dim,
            target_dim,
            noise,
            min_separation,
        } => {
            if *source_dim == 0 || *target_dim == 0 {
                return Err(Error::Config("injection dimensions are 1-based".into()));
            }
            let events = match (count, rate) {
                (Some(n), None) => EventCount::Count(*n),
                (None, Some(r)) => EventCount::Rate(*r),
                _ => return Err(Error::Config("delayed-pair injection needs exactly one of count or rate".into())),
            };
            inject_delayed_pair(
                series,
                events,
                *lag,
                source_dim - 1,
                target_dim - 1,
                noise,
                *min_separation,
                seed,
            )
        }
    }
}

/// Result of [`load_pm25_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedColumns {
    pub series: TimeSeries,
    /// Rows skipped because a selected column was missing or unparseable.
    pub dropped: usize,
}

/// Loads selected numeric columns of a PM2.5 city file (e.g. `TEMP`, `PRES`).
///
/// Raw rows before `row_offset` are skipped. Rows with `NA`, empty or
/// non-numeric values in any selected column are dropped and counted. At most
/// `max_rows` kept rows are returned, re-indexed from `t = 1`.
pub fn load_pm25_csv(path: impl AsRef<Path>, columns: &[String], row_offset: usize, max_rows: Option<usize>) -> Result<LoadedColumns> {
    let path = path.as_ref();
    if columns.is_empty() {
        return Err(Error::Config("select at least one column".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::file(path, e))?;
    let headers = reader.headers().map_err(|e| Error::file(path, e))?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h == c).ok_or_else(|| {
                Error::file(
                    path,
                    format!(
                        "column `{c}` not found; available: {}",
                        headers.iter().collect::<Vec<_>>().join(", ")
                    ),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in reader.records().skip(row_offset) {
        if max_rows.is_some_and(|m| rows.len() >= m) {
            break;
        }
        let record = record.map_err(|e| Error::file(path, e))?;
        let parsed: Option<Vec<f64>> = idx
            .iter()
            .map(|&i| record.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(row) => rows.push(row),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    if let Some(m) = max_rows {
        if rows.len() < m {
            return Err(Error::file(path, format!("need {m} complete rows, found {}", rows.len())));
        }
    }
    let series = TimeSeries::from_rows(1, &rows).map_err(|e| Error::file(path, e))?;
    Ok(LoadedColumns { series, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_values() {
        let s = gen_sine(0, 400, 10.0).unwrap();
        assert_eq!(s.get(0, 0), Some(0.0));
        assert_eq!(s.get(7, 0), Some(0.7f64.sin()));
    }

    /// Sample autocorrelation peaks at the sine period 20π ≈ 62.8.
    #[test]
    fn sine_autocorrelation_period() {
        let v = gen_sine(1, 2000, 10.0).unwrap().column(0);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let acf = |lag: usize| -> f64 {
            (0..v.len() - lag).map(|i| (v[i] - mean) * (v[i + lag] - mean)).sum::<f64>() / (v.len() - lag) as f64
        };
        let best = (40..90).max_by(|&a, &b| acf(a).total_cmp(&acf(b))).unwrap();
        assert_eq!(best, 63);
    }

    #[test]
    fn sincos_norm() {
        let s = gen_sincos(0, 1500, 10.0).unwrap();
        assert_eq!(s.len(), 1500);
        assert_eq!((s.get(0, 0), s.get(0, 1)), (Some(0.0), Some(1.0)));
        let worst = s
            .values()
            .rows()
            .into_iter()
            .map(|r| (1.0 - (r[0] * r[0] + r[1] * r[1])).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn periodic_indices() {
        let s = gen_sine(1, 1500, 10.0).unwrap();
        let d = inject_periodic(&s, 50, &NoiseSpec::gaussian(0.0, 0.5), 3).unwrap();
        let idx: Vec<_> = d.labels.indices(0).iter().copied().collect();
        assert_eq!(idx.len(), 30);
        assert_eq!(idx[0], 50);
        assert_eq!(*idx.last().unwrap(), 1500);
        assert!(idx.iter().all(|t| t % 50 == 0));
        assert_eq!(d, inject_periodic(&s, 50, &NoiseSpec::gaussian(0.0, 0.5), 3).unwrap());
        assert_ne!(d.series, inject_periodic(&s, 50, &NoiseSpec::gaussian(0.0, 0.5), 4).unwrap().series);
        let zero_start = gen_sine(0, 101, 10.0).unwrap();
        let d0 = inject_periodic(&zero_start, 50, &NoiseSpec::gaussian(0.0, 0.5), 3).unwrap();
        assert_eq!(d0.labels.indices(0).iter().copied().collect::<Vec<_>>(), vec![50, 100]);
    }

    /// E|N(0, 0.5)| with 0.5 as the standard deviation is 0.5·sqrt(2/π) ≈ 0.3989.
    #[test]
    fn periodic_noise_scale_is_a_std() {
        let s = TimeSeries::univariate(1, vec![0.0; 200_000]).unwrap();
        let d = inject_periodic(&s, 1, &NoiseSpec::gaussian(0.0, 0.5), 11).unwrap();
        let mean_abs = d.series.column(0).iter().map(|v| v.abs()).sum::<f64>() / 200_000.0;
        let expected = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs - expected).abs() < 0.005, "{mean_abs}");
    }

    #[test]
    fn relative_signed_noise_uses_series_std() {
        // series with std 2 in dimension 1
        let s = TimeSeries::univariate(1, (0..20_000).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect()).unwrap();
        let noise = NoiseSpec {
            mean: 0.5,
            std: 1.0,
            random_sign: true,
            relative: true,
        };
        let d = inject_periodic(&s, 2, &noise, 5).unwrap();
        let diffs: Vec<f64> = d
            .labels
            .indices(0)
            .iter()
            .map(|&t| d.series.get(t, 0).unwrap() - d.clean.get(t, 0).unwrap())
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // mixture of N(±1, 2): mean 0, variance 4 + 1
        assert!(mean.abs() < 0.1, "{mean}");
        assert!((var - 5.0).abs() < 0.3, "{var}");
    }

    #[test]
    fn delayed_pair_labels() {
        let s = gen_sincos(1, 1500, 10.0).unwrap();
        let noise = NoiseSpec::gaussian(0.0, 0.5);
        let d = inject_delayed_pair(&s, EventCount::Count(30), 10, 1, 0, &noise, None, 9).unwrap();
        let src: Vec<_> = d.labels.indices(1).iter().copied().collect();
        let tgt: Vec<_> = d.labels.indices(0).iter().copied().collect();
        assert_eq!((src.len(), tgt.len()), (30, 30));
        assert!(src.iter().zip(&tgt).all(|(a, b)| b - a == 10));
        assert!(src.windows(2).all(|w| w[1] - w[0] >= 11));
        assert!(*tgt.last().unwrap() <= 1500);

        let same = inject_delayed_pair(&s, EventCount::Count(30), 0, 1, 0, &noise, None, 9).unwrap();
        assert_eq!(same.labels.indices(0), same.labels.indices(1));
    }

    #[test]
    fn delayed_pair_rate_and_capacity() {
        let s = gen_sincos(1, 1000, 10.0).unwrap();
        let noise = NoiseSpec::gaussian(0.0, 1.0);
        let d = inject_delayed_pair(&s, EventCount::Rate(0.01), 10, 0, 1, &noise, None, 1).unwrap();
        assert_eq!(d.labels.indices(0).len(), 10);
        assert!(inject_delayed_pair(&s, EventCount::Count(991), 10, 0, 1, &noise, Some(1), 1).is_err());
        assert!(inject_delayed_pair(&s, EventCount::Count(100), 10, 0, 1, &noise, None, 1).is_err());
        assert!(inject_delayed_pair(&s, EventCount::Count(5), 1000, 0, 1, &noise, None, 1).is_err());
    }

    #[test]
    fn loader_drops_missing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pm.csv");
        std::fs::write(
            &path,
            "No,year,PRES,TEMP,cbwd\n1,2010,1021,-11,NW\n2,2010,NA,-12,NW\n3,2010,1020,-11.5,NW\n4,2010,1019,,SE\n5,2010,1018,-10,SE\n",
        )
        .unwrap();
        let cols = vec!["TEMP".to_string(), "PRES".to_string()];
        let loaded = load_pm25_csv(&path, &cols, 0, None).unwrap();
        assert_eq!(loaded.dropped, 2);
        assert_eq!(loaded.series.dim(), 2);
        assert_eq!(loaded.series.start(), 1);
        assert_eq!(loaded.series.column(0), vec![-11.0, -11.5, -10.0]);
        let offset = load_pm25_csv(&path, &cols[..1], 2, Some(2)).unwrap();
        assert_eq!(offset.series.column(0), vec![-11.5, -10.0]);
        assert!(load_pm25_csv(&path, &cols, 0, Some(10)).is_err());
        let err = load_pm25_csv(&path, &["DEWP".to_string()], 0, None).unwrap_err();
        assert!(err.to_string().contains("DEWP"));
        assert!(load_pm25_csv(dir.path().join("nope.csv"), &cols, 0, None).is_err());
    }
}
