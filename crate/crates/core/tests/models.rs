use std::fmt::Write as _;

use ltop::datagen::gen_sine;
use ltop::evaluation::evaluate_window;
use ltop::models::{train, Forecaster, ModelSpec};
use ltop::pipeline::{self, ExperimentConfig, Outcome};
use ltop::scorecaster::{fit_score_model, forecast};
use ltop::series::{sliding_windows, zscore_normalize};
use ltop::{LabelSet, ScoreSeries, TrainConfig, Window};
use ndarray::Array2;

#[test]
fn lstm_learns_a_sine() {
    let series = gen_sine(1, 600, 10.0).unwrap();
    let (z, _) = zscore_normalize(&series).unwrap();
    let w = Window::new(10).unwrap();
    let config = TrainConfig {
        epochs: 150,
        learning_rate: 1e-2,
        seed: 4,
        ..TrainConfig::default()
    };
    let (model, report) = train(&ModelSpec::Lstm { hidden: 16 }, &z.slice(0..400).unwrap(), w, &config).unwrap();
    assert!(report.epoch_loss.last().unwrap() < &report.epoch_loss[0]);

    let held_out = sliding_windows(&z.slice(390..600).unwrap(), w).unwrap();
    let pred = model.predict_batch(held_out.inputs.view()).unwrap();
    let mse = (&pred - &held_out.targets).mapv(|v| v * v).mean().unwrap();
    assert!(mse.sqrt() < 0.05, "held-out rmse {}", mse.sqrt());
}

#[test]
fn score_model_continues_an_impulse_train() {
    let period = 12;
    let spike = |t: usize| if t.is_multiple_of(period) { 1.0 } else { 0.02 };
    let values = Array2::from_shape_fn((300, 1), |(i, _)| spike(i + 1));
    let observed = ScoreSeries::observed(1, values).unwrap();
    let config = TrainConfig {
        epochs: 150,
        learning_rate: 1e-2,
        forget_bias: 3.0,
        seed: 2,
        ..TrainConfig::default()
    };
    let (f, _) = fit_score_model(&ModelSpec::Lstm { hidden: 16 }, &observed, Window::new(20).unwrap(), &config, true).unwrap();
    let run = forecast(&f, &observed, 60).unwrap();

    let mut labels = LabelSet::new(1);
    for t in (301..=360).filter(|t| t % period as i64 == 0) {
        labels.insert(0, t);
    }
    let auc = evaluate_window(&run.forecasts, &labels).unwrap().auc(0).unwrap();
    assert_eq!(auc, 1.0, "forecast {:?}", run.forecasts.values());
}

fn csv_config(path: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
version = 1
name = "causal"
seed = 5

[data]
source = "csv"
path = {path:?}
columns = ["TEMP"]

[injection]
mode = "periodic"
period = 20
noise = {{ std = 0.5 }}

[split]
points = [150, 300]

[detector]
kind = "lstm"
window = 8
hidden = 6
train = {{ epochs = 10, learning_rate = 0.01 }}

[scorecaster]
kind = "lstm"
window = 25
hidden = 6
train = {{ epochs = 10, learning_rate = 0.01 }}

[evaluation]
protocol = "window"
"#
    ))
    .unwrap()
}

fn write_csv(path: &std::path::Path, value: impl Fn(usize) -> f64) {
    let mut text = String::from("No,TEMP\n");
    for i in 0..400 {
        writeln!(text, "{i},{}", value(i)).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn test_segment_values_do_not_leak_into_models_or_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    let perturbed = dir.path().join("perturbed.csv");
    let base = |i: usize| (i as f64 / 7.0).sin() * 3.0 + 10.0;
    write_csv(&clean, base);
    write_csv(&perturbed, |i| if i >= 300 { base(i) * -4.0 + 100.0 } else { base(i) });

    let a = pipeline::run(&csv_config(&clean)).unwrap();
    let b = pipeline::run(&csv_config(&perturbed)).unwrap();
    assert_ne!(a.dataset.series, b.dataset.series);
    assert_eq!(a.model_checksums(), b.model_checksums());
    let (Outcome::Window { run: ra, .. }, Outcome::Window { run: rb, .. }) = (&a.outcome, &b.outcome) else {
        panic!("expected the window protocol")
    };
    assert_eq!(ra.forecasts, rb.forecasts);
    assert_eq!(a.observed, b.observed);
}
