//! Plain-text model checkpoints.
//!
//! ```text
//! ltop-checkpoint 1
//! kind lstm
//! window 30
//! dim 1
//! hidden 64
//! tensor w_x 256 1
//! 0.0123 -0.5 ...
//! ...
//! end
//! ```
//!
//! Each `tensor` header gives a name and shape and is followed by one line of
//! space-separated values. Values use shortest round-trip formatting, so a
//! checkpoint reloads bit for bit. An optional pair of `norm_mean`/`norm_std`
//! tensors stores the normalization the model was trained under.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{LstmModel, LstmParams, RidgeArModel, TrainedModel};
use crate::error::{Error, Result};
use crate::series::{Normalizer, Window};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "ltop-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub normalizer: Option<Normalizer>,
}

fn push_tensor(out: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
    let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{}", vals.join(" "));
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        match &self.model {
            TrainedModel::Ridge(m) => {
                let _ = write!(
                    out,
                    "kind ridge\nwindow {}\ndim {}\nlambda {}\n",
                    m.window().size(),
                    m.dim(),
                    m.lambda
                );
                push_tensor(
                    &mut out,
                    "weights",
                    m.weights.shape(),
                    m.weights.as_slice().expect("standard layout"),
                );
            }
            TrainedModel::Lstm(m) => {
                let _ = write!(
                    out,
                    "kind lstm\nwindow {}\ndim {}\nhidden {}\n",
                    m.window().size(),
                    m.dim(),
                    m.hidden()
                );
                let p = &m.params;
                let shapes: [&[usize]; 5] = [p.w_x.shape(), p.w_h.shape(), p.b.shape(), p.w_out.shape(), p.b_out.shape()];
                for ((name, shape), values) in LstmParams::NAMES.iter().zip(shapes).zip(p.slices()) {
                    push_tensor(&mut out, name, shape, values);
                }
            }
        }
        if let Some(norm) = &self.normalizer {
            push_tensor(&mut out, "norm_mean", &[norm.dim()], norm.mean.as_slice().expect("contiguous"));
            push_tensor(&mut out, "norm_std", &[norm.dim()], norm.std.as_slice().expect("contiguous"));
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("missing header".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(format!("unsupported version {version}")));
        }

        let mut fields = BTreeMap::new();
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        let mut ended = false;
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("end") => {
                    ended = true;
                    break;
                }
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| bad("tensor without name".into()))?;
                    let shape = parts
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape for {name}")))?;
                    let data = lines.next().ok_or_else(|| bad(format!("missing data for {name}")))?;
                    let values = data
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad value in {name}")))?;
                    if values.len() != shape.iter().product::<usize>() {
                        return Err(bad(format!("tensor {name} has {} values for shape {shape:?}", values.len())));
                    }
                    tensors.insert(name.to_string(), (shape, values));
                }
                Some(key) => {
                    let value = parts.next().ok_or_else(|| bad(format!("missing value for {key}")))?;
                    fields.insert(key.to_string(), value.to_string());
                }
                None => {}
            }
        }
        if !ended {
            return Err(bad("truncated file".into()));
        }

        let field = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing field {k}")));
        let int = |k: &str| -> Result<usize> { field(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let mut take = |name: &str| tensors.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")));
        let matrix = |(shape, values): (Vec<usize>, Vec<f64>)| -> Result<Array2<f64>> {
            match shape[..] {
                [r, c] => Ok(Array2::from_shape_vec((r, c), values).expect("checked size")),
                _ => Err(bad(format!("expected a matrix, got shape {shape:?}"))),
            }
        };
        let vector = |(_, values): (Vec<usize>, Vec<f64>)| Array1::from(values);

        let window = Window::new(int("window")?)?;
        let dim = int("dim")?;
        let model = match field("kind")?.as_str() {
            "ridge" => {
                let lambda: f64 = field("lambda")?.parse().map_err(|_| bad("bad lambda".into()))?;
                TrainedModel::Ridge(RidgeArModel::from_weights(window, dim, lambda, matrix(take("weights")?)?)?)
            }
            "lstm" => {
                let params = LstmParams {
                    w_x: matrix(take("w_x")?)?,
                    w_h: matrix(take("w_h")?)?,
                    b: vector(take("b")?),
                    w_out: matrix(take("w_out")?)?,
                    b_out: vector(take("b_out")?),
                };
                let model = LstmModel::from_params(window, params)?;
                if model.hidden() != int("hidden")? || model.dim() != dim {
                    return Err(bad("hyperparameters disagree with tensor shapes".into()));
                }
                TrainedModel::Lstm(model)
            }
            other => return Err(bad(format!("unknown model kind {other}"))),
        };
        let normalizer = match (tensors.remove("norm_mean"), tensors.remove("norm_std")) {
            (Some(mean), Some(std)) => Some(Normalizer {
                mean: vector(mean),
                std: vector(std),
            }),
            (None, None) => None,
            _ => return Err(bad("incomplete normalizer".into())),
        };
        Ok(Self { model, normalizer })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_text()).map_err(|e| Error::file(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_text(&text).map_err(|e| Error::file(path, e))
}
