//! Long-term outlier prediction for time series.
//!
//! A detection model `g` turns observations into residual outlier scores; a
//! second model `f` is trained on the score sequence itself and rolled forward
//! recursively to forecast scores beyond the last observation.

pub mod datagen;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod scorecaster;
pub mod seeds;
pub mod series;

pub use error::{Error, ErrorKind, Result};
pub use pipeline::{run, ExperimentConfig, ExperimentReport};
pub use models::{Forecaster, ModelSpec, TrainConfig, TrainedModel};
pub use series::{LabelSet, Normalizer, Provenance, ScoreSeries, TimeIndex, TimeSeries, Window};
