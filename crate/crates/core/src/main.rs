use std::path::{Path, PathBuf};
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ltop::detection::{split, Detector};
use ltop::error::{Error, ErrorKind, Result};
use ltop::evaluation::{evaluate_window, render_window, write_auc_csv};
use ltop::io::{read_labels, read_scores, read_series, save, write_forecast, write_labels, write_scores, write_series};
use ltop::models::{read_checkpoint, Checkpoint, Forecaster};
use ltop::pipeline::{self, default_out_root, generate, mark_failed, ExperimentConfig, Protocol};
use ltop::scorecaster::{fit_score_model, forecast, ScoreModel};
use ltop::seeds::{derive, DETECTOR_STREAM, SCORE_MODEL_STREAM};
use ltop::series::{ScoreSeries, TimeIndex, TimeSeries};
use ltop::TrainConfig;

/// Long-term outlier prediction: score a series with a detection model, then
/// forecast the scores themselves.
#[derive(Parser)]
#[command(name = "ltop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory. Defaults to `$LTOP_OUT_DIR/<name>` (or `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the series and inject outliers.
    Generate(Common),
    /// Fit the detection model on the first segment.
    TrainDetector(Common),
    /// Score observations after the detector's training segment.
    Score {
        #[command(flatten)]
        common: Common,
        /// First time index to score (default: right after the training segment).
        #[arg(long)]
        start: Option<TimeIndex>,
        /// Last time index to score (default: end of segment B).
        #[arg(long)]
        end: Option<TimeIndex>,
    },
    /// Fit the score model on observed scores of segment B.
    TrainScorecaster(Common),
    /// Roll the score model forward from the last observed score.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Steps to forecast (default: length of the test segment).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Whole-window AUC of a score file against a label file.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Also write `dim,k,auc,n_pos,n_neg` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write a report directory.
    Run(Common),
    /// Full pipeline with the per-horizon evaluation.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Largest horizon (default: from the config, else 14).
        #[arg(long)]
        max_horizon: Option<usize>,
    },
}

struct Context {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Context> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let out = self.out.clone().unwrap_or_else(|| default_out_root().join(&config.name));
        Ok(Context {
            seed: config.seed,
            config,
            out,
        })
    }
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn series(&self) -> Result<TimeSeries> {
        let path = self.path("series.csv");
        if path.is_file() {
            read_series(path)
        } else {
            Ok(generate(&self.config, self.seed)?.series)
        }
    }

    fn segments(&self, series: &TimeSeries) -> Result<Vec<TimeSeries>> {
        split(series, &self.config.split.points)
    }

    fn train_config(&self, train: &TrainConfig, stream: u64) -> TrainConfig {
        TrainConfig {
            seed: derive(self.seed, stream),
            ..*train
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(common) => {
            let ctx = common.load()?;
            let data = generate(&ctx.config, ctx.seed)?;
            save(ctx.path("series.csv"), |o| write_series(o, &data.series))?;
            save(ctx.path("labels.csv"), |o| write_labels(o, &data.labels))?;
            save(ctx.path("manifest.txt"), |o| {
                writeln!(o, "stage = generate")?;
                writeln!(o, "name = {}", ctx.config.name)?;
                writeln!(o, "seed = {}", ctx.seed)?;
                writeln!(o, "config_sha256 = {}", ctx.config.hash())
            })?;
            println!(
                "{} points, {} dims, {} labels -> {}",
                data.series.len(),
                data.series.dim(),
                data.labels.total(),
                ctx.out.display()
            );
            Ok(())
        }
        Command::TrainDetector(common) => {
            let ctx = common.load()?;
            let series = ctx.series()?;
            let parts = ctx.segments(&series)?;
            let section = &ctx.config.detector;
            let det = Detector::fit(
                &section.spec()?,
                &parts[0],
                section.window()?,
                &ctx.train_config(&section.train, DETECTOR_STREAM),
                section.normalize,
            )?;
            write_model(
                &ctx.path("models/g.ckpt"),
                &Checkpoint {
                    model: det.model,
                    normalizer: det.normalizer,
                },
            )?;
            println!("detector trained on {}..={}, rmse {:.4e}", parts[0].start(), parts[0].end(), det.report.final_rmse());
            Ok(())
        }
        Command::Score { common, start, end } => {
            let ctx = common.load()?;
            let series = ctx.series()?;
            let parts = ctx.segments(&series)?;
            let ckpt = read_checkpoint(ctx.path("models/g.ckpt"))?;
            let det = Detector::from_parts(ckpt.model, ckpt.normalizer, parts[0].end());
            let first = start.unwrap_or(parts[1].start());
            let last = end.unwrap_or(parts[1].end());
            if first <= det.train_end || last < first {
                return Err(Error::InvalidArgument(format!(
                    "score range {first}..={last} must start after the training segment (ends at {})",
                    det.train_end
                )));
            }
            let context = series.slice_time(series.start(), first - 1)?;
            let scores = det.score(&series.slice_time(first, last)?, &context)?;
            save(ctx.path("scores_observed.csv"), |o| write_scores(o, &scores))?;
            println!("scored {first}..={last}");
            Ok(())
        }
        Command::TrainScorecaster(common) => {
            let ctx = common.load()?;
            let series = ctx.series()?;
            let parts = ctx.segments(&series)?;
            let observed = read_scores(ctx.path("scores_observed.csv"))?;
            let b = observed.slice_time(parts[1].start(), parts[1].end())?;
            let section = &ctx.config.scorecaster;
            let (model, report) = fit_score_model(
                &section.spec()?,
                &b,
                section.window()?,
                &ctx.train_config(&section.train, SCORE_MODEL_STREAM),
                section.normalize,
            )?;
            write_model(
                &ctx.path("models/f.ckpt"),
                &Checkpoint {
                    model: model.model,
                    normalizer: model.normalizer,
                },
            )?;
            println!("score model trained on {}..={}, rmse {:.4e}", b.start(), b.end(), report.final_rmse());
            Ok(())
        }
        Command::Forecast { common, horizon } => {
            let ctx = common.load()?;
            let series = ctx.series()?;
            let parts = ctx.segments(&series)?;
            let ckpt = read_checkpoint(ctx.path("models/f.ckpt"))?;
            let f = ScoreModel {
                model: ckpt.model,
                normalizer: ckpt.normalizer,
            };
            let observed = read_scores(ctx.path("scores_observed.csv"))?;
            let history = observed.up_to(parts[1].end())?;
            let horizon = horizon
                .or(ctx.config.evaluation.horizon)
                .or(parts.get(2).map(TimeSeries::len))
                .ok_or_else(|| Error::Config("pass --horizon for a two-segment split".into()))?;
            let run = forecast(&f, &history, horizon)?;
            let joined = history.concat(&run.forecasts)?;
            save(ctx.path("scores_forecast.csv"), |o| write_forecast(o, &joined))?;
            println!("forecast {}..={} with window {}", run.forecasts.start(), run.forecasts.end(), f.window().size());
            Ok(())
        }
        Command::Evaluate { scores, labels, out } => {
            let scores = read_scores(&scores)?;
            let labels = read_labels(&labels)?;
            let report = evaluate_window(&forecast_rows(&scores)?, &labels)?;
            print!("{}", render_window(&report, &[]));
            if let Some(path) = out {
                save(path, |o| write_auc_csv(o, &report.cells))?;
            }
            Ok(())
        }
        Command::Run(common) => run_full(common, None),
        Command::Sweep { common, max_horizon } => run_full(common, Some(max_horizon)),
    }
}

/// The forecast rows of a score file, or the whole file if it has none.
fn forecast_rows(scores: &ScoreSeries) -> Result<ScoreSeries> {
    match scores.provenance().iter().position(|p| *p == ltop::Provenance::Forecast) {
        Some(first) => scores.slice_time(scores.start() + first as TimeIndex, scores.end()),
        None => Ok(scores.clone()),
    }
}

fn write_model(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    save(path, |o| o.write_all(ckpt.to_text().as_bytes()))
}

fn run_full(common: Common, sweep: Option<Option<usize>>) -> Result<()> {
    let mut ctx = common.load()?;
    if let Some(k) = sweep {
        ctx.config.evaluation.protocol = Protocol::Sweep;
        if let Some(k) = k {
            ctx.config.evaluation.max_horizon = k;
        }
    }
    match pipeline::run(&ctx.config) {
        Ok(report) => {
            report.write_to(&ctx.out)?;
            print!("{}", report.summary());
            println!("report written to {}", ctx.out.display());
            Ok(())
        }
        Err(e) => {
            if ctx.out.exists() {
                let _ = mark_failed(&ctx.out, &ctx.config, ctx.seed, &e);
            }
            Err(e)
        }
    }
}
