//! Declarative experiment description, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::InjectionSpec;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, TrainConfig};
use crate::series::Window;

pub const CONFIG_VERSION: u32 = 1;

/// Where the clean series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    /// `sin(t / scale)`.
    Sine {
        length: usize,
        #[serde(default = "one")]
        start: i64,
        #[serde(default = "ten")]
        scale: f64,
    },
    /// `(sin(t / scale), cos(t / scale))`.
    Sincos {
        length: usize,
        #[serde(default = "one")]
        start: i64,
        #[serde(default = "ten")]
        scale: f64,
    },
    /// Numeric columns of a PM2.5 city CSV. A relative `path` is resolved
    /// against the config file's directory.
    Csv {
        path: PathBuf,
        columns: Vec<String>,
        #[serde(default)]
        row_offset: usize,
        #[serde(default)]
        rows: Option<usize>,
    },
}

fn one() -> i64 {
    1
}

fn ten() -> f64 {
    10.0
}

/// Segment boundaries as element counts from the start of the series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// One point gives two segments, two points give three. Empty means `⌊T/2⌋`.
    #[serde(default)]
    pub points: Vec<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ridge,
    Lstm,
}

/// One layer's model: family, window and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub window: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Z-score the model's inputs and targets with training-segment statistics.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self.kind {
            ModelKind::Ridge => {
                let lambda = self.lambda.unwrap_or(1e-3);
                if lambda.is_nan() || lambda < 0.0 {
                    return Err(Error::Config(format!("ridge lambda must be >= 0, got {lambda}")));
                }
                Ok(ModelSpec::Ridge { lambda })
            }
            ModelKind::Lstm => match self.hidden {
                Some(h) if h > 0 => Ok(ModelSpec::Lstm { hidden: h }),
                _ => Err(Error::Config("lstm model needs `hidden` >= 1".into())),
            },
        }
    }

    pub fn window(&self) -> Result<Window> {
        Window::new(self.window).map_err(|_| Error::Config("model window must be >= 1".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One AUC over the whole forecast window after the training data.
    Window,
    /// One AUC per dimension and horizon `k = 1..=max_horizon`, over anchors in the test segment.
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub protocol: Protocol,
    /// Sweep: largest horizon `K`.
    #[serde(default = "fourteen")]
    pub max_horizon: usize,
    /// Forecast length when there is no test segment to size it.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Display names per dimension.
    #[serde(default)]
    pub names: Vec<String>,
}

fn fourteen() -> usize {
    14
}

/// A complete experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    pub injection: InjectionSpec,
    #[serde(default)]
    pub split: SplitSpec,
    pub detector: ModelSection,
    pub scorecaster: ModelSection,
    pub evaluation: EvaluationSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative CSV paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DataSpec::Csv { path: csv, .. } = &mut config.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.detector.spec()?;
        self.scorecaster.spec()?;
        self.detector.window()?;
        self.scorecaster.window()?;
        self.detector.train.validate()?;
        self.scorecaster.train.validate()?;
        if self.split.points.len() > 2 {
            return Err(Error::Config("at most two split points are supported".into()));
        }
        if self.split.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("split points must be strictly increasing".into()));
        }
        if let DataSpec::Sine { length, .. } | DataSpec::Sincos { length, .. } = self.data {
            if let Some(&last) = self.split.points.last() {
                if last >= length {
                    return Err(Error::Config(format!("split point {last} beyond series length {length}")));
                }
            }
        }
        if self.evaluation.protocol == Protocol::Sweep && self.evaluation.max_horizon == 0 {
            return Err(Error::Config("max_horizon must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering, used for hashing.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
