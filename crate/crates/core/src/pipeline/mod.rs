//! End-to-end experiment: generate or load → split → train g → score →
//! train f → forecast or sweep → evaluate → persist.
//!
//! With three segments A, B, C the detector is fitted on A, its residuals on B
//! train the score model, and C is the evaluation target. With two segments
//! the score model is trained on B and forecasts past the end of the series.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array3;
use sha2::{Digest, Sha256};

pub use config::{DataSpec, EvaluationSpec, ExperimentConfig, ModelKind, ModelSection, Protocol, SplitSpec, CONFIG_VERSION};

use crate::datagen::{gen_sincos, gen_sine, inject, load_pm25_csv, GeneratedDataset};
use crate::detection::{split, Detector};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_window, sweep_anchors, sweep_from_forecasts, write_auc_csv, AucCell, AucReport, HorizonSweep};
use crate::io::{write_forecast, write_labels, write_scores, write_series};
use crate::models::{Checkpoint, TrainConfig, TrainReport};
use crate::scorecaster::{fit_score_model, forecast, forecast_many, ForecastRun, ScoreModel};
use crate::seeds::{derive, DATA_STREAM, DETECTOR_STREAM, SCORE_MODEL_STREAM};
use crate::series::{ScoreSeries, TimeIndex, TimeSeries};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "LTOP_OUT_DIR";

/// Output root: `LTOP_OUT_DIR` if set, else `./runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Time range of the data (`x`) or observed scores (`scores`) a stage read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageAccess {
    pub stage: &'static str,
    pub source: &'static str,
    pub first: TimeIndex,
    pub last: TimeIndex,
}

/// Segment boundaries, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub first: TimeIndex,
    pub last: TimeIndex,
}

impl Segment {
    fn of(series: &TimeSeries) -> Self {
        Self {
            first: series.start(),
            last: series.end(),
        }
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Window {
        run: ForecastRun,
        /// `None` when nothing labeled lies inside the forecast window's range.
        auc: AucReport,
    },
    Sweep {
        anchors: Vec<TimeIndex>,
        /// `(anchors, K, D)`, clamped.
        forecasts: Array3<f64>,
        sweep: HorizonSweep,
    },
}

/// Everything a run produced. Numeric content depends only on config and seed.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    pub dataset: GeneratedDataset,
    pub segments: Vec<Segment>,
    pub detector: Detector,
    pub score_model: ScoreModel,
    pub score_report: TrainReport,
    /// Observed residual scores from the start of segment B onward.
    pub observed: ScoreSeries,
    pub outcome: Outcome,
    pub timings: Vec<(&'static str, Duration)>,
    pub access: Vec<StageAccess>,
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..*train }
}

fn stage<T>(name: &'static str, timings: &mut Vec<(&'static str, Duration)>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let started = Instant::now();
    let out = f().map_err(|e| e.in_stage(name))?;
    let elapsed = started.elapsed();
    log::info!("{name}: {:.2}s", elapsed.as_secs_f64());
    timings.push((name, elapsed));
    Ok(out)
}

/// Builds the clean series and injects outliers with stream 0 of `seed`.
pub fn generate(config: &ExperimentConfig, seed: u64) -> Result<GeneratedDataset> {
    let clean = match &config.data {
        DataSpec::Sine { length, start, scale } => gen_sine(*start, *length, *scale)?,
        DataSpec::Sincos { length, start, scale } => gen_sincos(*start, *length, *scale)?,
        DataSpec::Csv {
            path,
            columns,
            row_offset,
            rows,
        } => {
            let loaded = load_pm25_csv(path, columns, *row_offset, *rows)?;
            if let Some(want) = rows {
                if loaded.series.len() < *want {
                    return Err(Error::Data(format!(
                        "{} has only {} usable rows after offset {row_offset}, need {want}",
                        path.display(),
                        loaded.series.len()
                    )));
                }
            }
            loaded.series
        }
    };
    inject(&clean, &config.injection, derive(seed, DATA_STREAM))
}

/// Runs the experiment with `config.seed` as master seed.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let seed = config.seed;
    let mut timings = Vec::new();
    let mut access = Vec::new();

    let dataset = stage("generate", &mut timings, || generate(config, seed))?;
    let series = &dataset.series;

    let parts = stage("split", &mut timings, || split(series, &config.split.points))?;
    let segments: Vec<Segment> = parts.iter().map(Segment::of).collect();
    let (a, b) = (&parts[0], &parts[1]);
    let c = parts.get(2);

    let g_spec = config.detector.spec()?;
    let g_train = seeded(&config.detector.train, derive(seed, DETECTOR_STREAM));
    let detector = stage("train-detector", &mut timings, || {
        Detector::fit(&g_spec, a, config.detector.window()?, &g_train, config.detector.normalize)
    })?;
    access.push(StageAccess {
        stage: "train-detector",
        source: "x",
        first: a.start(),
        last: a.end(),
    });
    log::info!("detector training rmse {:.4e}", detector.report.final_rmse());

    // Scores are causal, so scoring C alongside B reads nothing a later stage may not see.
    let scored_until = match (config.evaluation.protocol, c) {
        (Protocol::Sweep, Some(c)) => c.end(),
        _ => b.end(),
    };
    let observed = stage("score", &mut timings, || {
        let context = series.slice_time(series.start(), a.end())?;
        let target = series.slice_time(b.start(), scored_until)?;
        detector.score(&target, &context)
    })?;
    access.push(StageAccess {
        stage: "score",
        source: "x",
        first: a.end() + 1 - config.detector.window as TimeIndex,
        last: scored_until,
    });

    let f_spec = config.scorecaster.spec()?;
    let f_train = seeded(&config.scorecaster.train, derive(seed, SCORE_MODEL_STREAM));
    let training_scores = observed.slice_time(b.start(), b.end())?;
    let (score_model, score_report) = stage("train-scorecaster", &mut timings, || {
        fit_score_model(&f_spec, &training_scores, config.scorecaster.window()?, &f_train, config.scorecaster.normalize)
    })?;
    access.push(StageAccess {
        stage: "train-scorecaster",
        source: "scores",
        first: training_scores.start(),
        last: training_scores.end(),
    });
    log::info!("score model training rmse {:.4e}", score_report.final_rmse());

    let outcome = match config.evaluation.protocol {
        Protocol::Window => {
            let horizon = match (c, config.evaluation.horizon) {
                (_, Some(h)) => h,
                (Some(c), None) => c.len(),
                (None, None) => {
                    return Err(Error::Config("two-segment window evaluation needs `evaluation.horizon`".into()));
                }
            };
            let run = stage("forecast", &mut timings, || forecast(&score_model, &training_scores, horizon))?;
            access.push(StageAccess {
                stage: "forecast",
                source: "scores",
                first: training_scores.end() + 1 - config.scorecaster.window as TimeIndex,
                last: training_scores.end(),
            });
            let auc = stage("evaluate", &mut timings, || evaluate_window(&run.forecasts, &dataset.labels))?;
            Outcome::Window { run, auc }
        }
        Protocol::Sweep => {
            let c = c.ok_or_else(|| Error::Config("the horizon sweep needs three segments (two split points)".into()))?;
            let k = config.evaluation.max_horizon;
            if c.len() <= k {
                return Err(Error::Config(format!("test segment of {} points is too short for K = {k}", c.len())));
            }
            let anchors = sweep_anchors(c.start(), c.end(), k);
            let forecasts = stage("forecast", &mut timings, || forecast_many(&score_model, &observed, &anchors, k))?;
            // each rollout reads scores up to its own anchor only
            access.push(StageAccess {
                stage: "forecast",
                source: "scores",
                first: anchors[0] + 1 - config.scorecaster.window as TimeIndex,
                last: *anchors.last().expect("nonempty anchors"),
            });
            let sweep = stage("evaluate", &mut timings, || sweep_from_forecasts(&anchors, &forecasts, &dataset.labels))?;
            Outcome::Sweep {
                anchors,
                forecasts,
                sweep,
            }
        }
    };

    Ok(ExperimentReport {
        config: config.clone(),
        config_hash: config.hash(),
        seed,
        version: env!("CARGO_PKG_VERSION"),
        dataset,
        segments,
        detector,
        score_model,
        score_report,
        observed,
        outcome,
        timings,
        access,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// `tau,k,a1..aD`: step `k` of the rollout anchored at `tau`.
fn write_sweep_forecasts(out: &mut Vec<u8>, anchors: &[TimeIndex], forecasts: &Array3<f64>) -> std::io::Result<()> {
    let (_, max_k, dim) = forecasts.dim();
    write!(out, "tau,k")?;
    for j in 1..=dim {
        write!(out, ",a{j}")?;
    }
    writeln!(out)?;
    for (i, tau) in anchors.iter().enumerate() {
        for k in 0..max_k {
            write!(out, "{tau},{}", k + 1)?;
            for j in 0..dim {
                write!(out, ",{}", forecasts[[i, k, j]])?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

impl ExperimentReport {
    pub fn auc_cells(&self) -> &[AucCell] {
        match &self.outcome {
            Outcome::Window { auc, .. } => &auc.cells,
            Outcome::Sweep { sweep, .. } => &sweep.cells,
        }
    }

    pub fn detector_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.detector.model.clone(),
            normalizer: self.detector.normalizer.clone(),
        }
    }

    pub fn score_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.score_model.model.clone(),
            normalizer: self.score_model.normalizer.clone(),
        }
    }

    /// SHA-256 of the detector and score-model checkpoints.
    pub fn model_checksums(&self) -> (String, String) {
        (
            sha256_hex(self.detector_checkpoint().to_text().as_bytes()),
            sha256_hex(self.score_checkpoint().to_text().as_bytes()),
        )
    }

    /// Numeric artifacts as `(relative path, bytes)`.
    pub fn artifacts(&self) -> Vec<(&'static str, Vec<u8>)> {
        let forecasts = match &self.outcome {
            Outcome::Window { run, .. } => {
                let b_end = self.segments[1].last;
                let history = self.observed.up_to(b_end).expect("observed covers B");
                let joined = history.concat(&run.forecasts).expect("forecast follows B");
                render(|o| write_forecast(o, &joined))
            }
            Outcome::Sweep { anchors, forecasts, .. } => render(|o| write_sweep_forecasts(o, anchors, forecasts)),
        };
        vec![
            ("series.csv", render(|o| write_series(o, &self.dataset.series))),
            ("labels.csv", render(|o| write_labels(o, &self.dataset.labels))),
            ("scores_observed.csv", render(|o| write_scores(o, &self.observed))),
            ("scores_forecast.csv", forecasts),
            ("auc.csv", render(|o| write_auc_csv(o, self.auc_cells()))),
            ("models/g.ckpt", self.detector_checkpoint().to_text().into_bytes()),
            ("models/f.ckpt", self.score_checkpoint().to_text().into_bytes()),
        ]
    }

    /// Human-readable AUC table.
    pub fn summary(&self) -> String {
        let names = &self.config.evaluation.names;
        match &self.outcome {
            Outcome::Window { auc, .. } => crate::evaluation::render_window(auc, names),
            Outcome::Sweep { sweep, .. } => crate::evaluation::render_sweep(sweep, names),
        }
    }

    fn manifest(&self, files: &[(&'static str, Vec<u8>)]) -> String {
        let (g_sum, f_sum) = self.model_checksums();
        let mut m = String::new();
        let _ = writeln!(m, "status = complete");
        let _ = writeln!(m, "stale = false");
        let _ = writeln!(m, "name = {}", self.config.name);
        let _ = writeln!(m, "version = {}", self.version);
        let _ = writeln!(m, "seed = {}", self.seed);
        let _ = writeln!(m, "config_sha256 = {}", self.config_hash);
        let _ = writeln!(m, "g_sha256 = {g_sum}");
        let _ = writeln!(m, "f_sha256 = {f_sum}");
        for s in &self.segments {
            let _ = writeln!(m, "segment = {}..={}", s.first, s.last);
        }
        let _ = writeln!(m, "g_train_rmse = {}", self.detector.report.final_rmse());
        let _ = writeln!(m, "f_train_rmse = {}", self.score_report.final_rmse());
        for (name, d) in &self.timings {
            let _ = writeln!(m, "time.{name} = {:.3}", d.as_secs_f64());
        }
        for (name, bytes) in files {
            let _ = writeln!(m, "file.{name} = {}", sha256_hex(bytes));
        }
        m
    }

    /// Writes the report directory. The manifest says `status = running` until
    /// every artifact is on disk.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("models")).map_err(|e| Error::file(dir, e))?;
        write_file(&dir.join("manifest.txt"), running_manifest(&self.config, self.seed).as_bytes())?;
        let files = self.artifacts();
        for (name, bytes) in &files {
            write_file(&dir.join(name), bytes)?;
        }
        write_file(&dir.join("manifest.txt"), self.manifest(&files).as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn running_manifest(config: &ExperimentConfig, seed: u64) -> String {
    format!(
        "status = running\nstale = true\nname = {}\nseed = {seed}\nconfig_sha256 = {}\n",
        config.name,
        config.hash()
    )
}

/// Marks `dir` as holding a failed run; whatever artifacts are there are stale.
pub fn mark_failed(dir: &Path, config: &ExperimentConfig, seed: u64, error: &Error) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let text = format!(
        "status = failed\nstale = true\nname = {}\nseed = {seed}\nconfig_sha256 = {}\nerror = {}\n",
        config.name,
        config.hash(),
        error.to_string().replace('\n', " ")
    );
    write_file(&dir.join("manifest.txt"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(protocol: &str, points: &str) -> ExperimentConfig {
        let text = format!(
            r#"
version = 1
name = "tiny"
seed = 5

[data]
source = "sincos"
length = 300

[injection]
mode = "delayed-pair"
count = 6
lag = 3
source_dim = 2
target_dim = 1
noise = {{ std = 0.5 }}

[split]
points = {points}

[detector]
kind = "ridge"
window = 8

[scorecaster]
kind = "lstm"
window = 10
hidden = 4
train = {{ epochs = 3 }}

[evaluation]
protocol = "{protocol}"
max_horizon = 5
horizon = 20
"#
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn stages_read_only_what_they_may() {
        for protocol in ["window", "sweep"] {
            let r = run(&tiny(protocol, "[100, 200]")).unwrap();
            let (a, b) = (r.segments[0], r.segments[1]);
            let last_read = |stage: &str| r.access.iter().filter(|s| s.stage == stage).map(|s| s.last).max().unwrap();
            assert_eq!(last_read("train-detector"), a.last);
            assert_eq!(last_read("train-scorecaster"), b.last);
            match &r.outcome {
                Outcome::Window { run, .. } => {
                    assert_eq!(last_read("forecast"), b.last);
                    assert_eq!(run.anchor, b.last);
                }
                Outcome::Sweep { anchors, .. } => {
                    assert_eq!(anchors[0], r.segments[2].first);
                    assert_eq!(*anchors.last().unwrap(), 300 - 5);
                }
            }
        }
    }

    #[test]
    fn two_segment_layout_forecasts_past_the_end() {
        let r = run(&tiny("window", "[150]")).unwrap();
        assert_eq!(r.segments.len(), 2);
        let Outcome::Window { run, auc } = &r.outcome else { panic!() };
        assert_eq!(run.forecasts.start(), 301);
        assert_eq!(run.forecasts.len(), 20);
        assert!(auc.cells.iter().all(|c| c.auc.is_none()));
        assert!(matches!(run_err(&tiny("sweep", "[150]")), Error::Stage { .. } | Error::Config(_)));
    }

    fn run_err(c: &ExperimentConfig) -> Error {
        run(c).unwrap_err()
    }

    #[test]
    fn artifacts_are_reproducible() {
        let c = tiny("sweep", "[100, 200]");
        let x = run(&c).unwrap().artifacts();
        let y = run(&c).unwrap().artifacts();
        assert_eq!(x, y);
        let other = ExperimentConfig { seed: 6, ..c };
        assert_ne!(run(&other).unwrap().artifacts()[0].1, x[0].1);
    }

    #[test]
    fn writes_report_directory() {
        let dir = tempfile::tempdir().unwrap();
        let r = run(&tiny("window", "[100, 200]")).unwrap();
        r.write_to(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.starts_with("status = complete"));
        for name in ["series.csv", "labels.csv", "scores_observed.csv", "scores_forecast.csv", "auc.csv", "models/g.ckpt", "models/f.ckpt"] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        let forecast = crate::io::read_scores(dir.path().join("scores_forecast.csv")).unwrap();
        assert_eq!((forecast.start(), forecast.end()), (101, 220));
        mark_failed(dir.path(), &r.config, r.seed, &Error::Numerical("boom".into())).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("status = failed") && manifest.contains("stale = true"));
    }
}
