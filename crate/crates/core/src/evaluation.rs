//! ROC-AUC and the two evaluation protocols: one AUC over a whole forecast
//! window, and one AUC per (dimension, horizon) cell.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::models::Forecaster;
use crate::scorecaster::forecast_many;
use crate::series::{LabelSet, ScoreSeries, TimeIndex};

/// Mann–Whitney AUC: `P(score_pos > score_neg) + ½·P(tie)`, by sorting.
///
/// The numerator is accumulated as an exact half-integer count, so the result
/// equals the pairwise definition bit for bit.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", scores.len()),
            actual: positive.len().to_string(),
        });
    }
    if let Some(position) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { position });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the count of (pos, neg) pairs won by the positive, ties counting 1
    let mut doubled_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        doubled_wins += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(doubled_wins as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// One AUC cell; `auc` is `None` when a class is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucCell {
    /// 0-based dimension.
    pub dim: usize,
    /// Horizon, or 0 for whole-window evaluation.
    pub k: usize,
    pub auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn cell(dim: usize, k: usize, scores: &[f64], positive: &[bool]) -> Result<AucCell> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    let value = match auc(scores, positive) {
        Ok(v) => Some(v),
        Err(Error::UndefinedAuc { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(AucCell {
        dim,
        k,
        auc: value,
        n_pos,
        n_neg,
    })
}

/// Per-dimension AUC over a whole forecast window.
#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub cells: Vec<AucCell>,
}

impl AucReport {
    pub fn auc(&self, dim: usize) -> Option<f64> {
        self.cells.iter().find(|c| c.dim == dim).and_then(|c| c.auc)
    }
}

/// Positives are exactly the labeled indices inside the window.
pub fn evaluate_window(forecasts: &ScoreSeries, labels: &LabelSet) -> Result<AucReport> {
    let times: Vec<TimeIndex> = (forecasts.start()..=forecasts.end()).collect();
    let cells = (0..forecasts.dim())
        .map(|j| {
            let positive: Vec<bool> = times.iter().map(|&t| labels.contains(j, t)).collect();
            cell(j, 0, &forecasts.column(j), &positive)
        })
        .collect::<Result<_>>()?;
    Ok(AucReport { cells })
}

/// AUC for every `(dimension, k)` with `k = 1..=max_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSweep {
    pub dim: usize,
    pub max_k: usize,
    /// Dimension-major: cell `(j, k)` at `j * max_k + (k - 1)`.
    pub cells: Vec<AucCell>,
}

impl HorizonSweep {
    pub fn get(&self, dim: usize, k: usize) -> &AucCell {
        &self.cells[dim * self.max_k + (k - 1)]
    }

    pub fn auc(&self, dim: usize, k: usize) -> Option<f64> {
        self.get(dim, k).auc
    }
}

/// Scores precomputed rollouts `(anchors, K, D)`: step `k` of the rollout from
/// `τ` is a positive for dimension `j` iff `τ + k` is labeled in `j`.
pub fn sweep_from_forecasts(anchors: &[TimeIndex], forecasts: &Array3<f64>, labels: &LabelSet) -> Result<HorizonSweep> {
    let (n, max_k, dim) = forecasts.dim();
    if n != anchors.len() {
        return Err(Error::Shape {
            expected: format!("{} anchors", anchors.len()),
            actual: n.to_string(),
        });
    }
    let mut cells = Vec::with_capacity(dim * max_k);
    for j in 0..dim {
        for k in 1..=max_k {
            let scores: Vec<f64> = (0..n).map(|a| forecasts[[a, k - 1, j]]).collect();
            let positive: Vec<bool> = anchors.iter().map(|&tau| labels.contains(j, tau + k as TimeIndex)).collect();
            cells.push(cell(j, k, &scores, &positive)?);
        }
    }
    Ok(HorizonSweep { dim, max_k, cells })
}

/// Anchors `τ` in `first..=last` with `τ + max_k <= last`.
pub fn sweep_anchors(first: TimeIndex, last: TimeIndex, max_k: usize) -> Vec<TimeIndex> {
    (first..=last - max_k as TimeIndex).collect()
}

/// For each anchor, forecasts from the scores observed up to it, then computes
/// one AUC per dimension and horizon. One rollout of length `max_k` per anchor
/// serves every `k`.
pub fn horizon_sweep(
    f: &dyn Forecaster,
    observed: &ScoreSeries,
    anchors: &[TimeIndex],
    labels: &LabelSet,
    max_k: usize,
) -> Result<HorizonSweep> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("horizon sweep needs at least one anchor".into()));
    }
    let forecasts = forecast_many(f, observed, anchors, max_k)?;
    sweep_from_forecasts(anchors, &forecasts, labels)
}

fn fmt_auc(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |a| a.to_string())
}

/// `dim,k,auc,n_pos,n_neg` with 1-based dimensions; `k = 0` marks a window AUC.
pub fn write_auc_csv<W: Write>(out: &mut W, cells: &[AucCell]) -> std::io::Result<()> {
    writeln!(out, "dim,k,auc,n_pos,n_neg")?;
    for c in cells {
        writeln!(out, "{},{},{},{},{}", c.dim + 1, c.k, fmt_auc(c.auc), c.n_pos, c.n_neg)?;
    }
    Ok(())
}

/// Aligned text table: one row per dimension, one column per horizon.
pub fn render_sweep(sweep: &HorizonSweep, names: &[String]) -> String {
    let label = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
    let width = (0..sweep.dim).map(|j| label(j).len()).max().unwrap_or(1).max(1);
    let mut out = format!("{:width$}", "k");
    for k in 1..=sweep.max_k {
        let _ = write!(out, " {k:>5}");
    }
    out.push('\n');
    for j in 0..sweep.dim {
        let _ = write!(out, "{:width$}", label(j));
        for k in 1..=sweep.max_k {
            match sweep.auc(j, k) {
                Some(a) => {
                    let _ = write!(out, " {a:>5.2}");
                }
                None => out.push_str("    NA"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_window(report: &AucReport, names: &[String]) -> String {
    let mut out = String::new();
    for c in &report.cells {
        let name = names.get(c.dim).cloned().unwrap_or_else(|| format!("x{}", c.dim + 1));
        let value = c.auc.map_or("NA".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(out, "{name}: AUC {value} ({} positives, {} negatives)", c.n_pos, c.n_neg);
    }
    out
}
