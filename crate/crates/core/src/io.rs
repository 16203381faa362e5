//! CSV readers and writers for series, scores, forecasts and labels.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a write
//! followed by a read reproduces every value bit for bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::series::{LabelSet, Provenance, ScoreSeries, TimeIndex, TimeSeries};

fn header(prefix: &str, dim: usize) -> String {
    (1..=dim).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>().join(",")
}

fn write_rows<W: Write>(
    out: &mut W,
    start: TimeIndex,
    values: ndarray::ArrayView2<'_, f64>,
    tags: Option<&[Provenance]>,
) -> std::io::Result<()> {
    for (i, row) in values.rows().into_iter().enumerate() {
        write!(out, "{}", start + i as TimeIndex)?;
        if let Some(tags) = tags {
            write!(out, ",{}", tags[i].tag())?;
        }
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_series<W: Write>(out: &mut W, series: &TimeSeries) -> std::io::Result<()> {
    writeln!(out, "t,{}", header("x", series.dim()))?;
    write_rows(out, series.start(), series.values(), None)
}

pub fn write_scores<W: Write>(out: &mut W, scores: &ScoreSeries) -> std::io::Result<()> {
    writeln!(out, "t,{}", header("a", scores.dim()))?;
    write_rows(out, scores.start(), scores.values(), None)
}

/// Forecast layout with a provenance column; `obs` rows may precede `pred` rows.
pub fn write_forecast<W: Write>(out: &mut W, scores: &ScoreSeries) -> std::io::Result<()> {
    writeln!(out, "t,provenance,{}", header("a", scores.dim()))?;
    write_rows(out, scores.start(), scores.values(), Some(scores.provenance()))
}

/// Labels as `dim,t` rows with 1-based dimensions.
pub fn write_labels<W: Write>(out: &mut W, labels: &LabelSet) -> std::io::Result<()> {
    writeln!(out, "dim,t")?;
    for (j, t) in labels.iter() {
        writeln!(out, "{},{t}", j + 1)?;
    }
    Ok(())
}

pub fn save<P: AsRef<Path>>(path: P, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::file(path, e))?;
    file.write_all(&buf).map_err(|e| Error::file(path, e))?;
    Ok(())
}

struct Table {
    start: TimeIndex,
    provenance: Vec<Provenance>,
    values: Array2<f64>,
}

fn read_table(path: &Path, prefix: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, e))?;
    let headers = reader.headers().map_err(|e| Error::file(path, e))?.clone();
    if headers.get(0) != Some("t") {
        return Err(Error::file(path, "first column must be `t`"));
    }
    let has_provenance = headers.get(1) == Some("provenance");
    let first_value = if has_provenance { 2 } else { 1 };
    let dim = headers.len() - first_value;
    if dim == 0 {
        return Err(Error::file(path, "no value columns"));
    }
    for (j, name) in headers.iter().skip(first_value).enumerate() {
        if name != format!("{prefix}{}", j + 1) {
            return Err(Error::file(
                path,
                format!("expected column `{prefix}{}`, found `{name}`", j + 1),
            ));
        }
    }

    let mut start = None;
    let mut flat = Vec::new();
    let mut provenance = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::file(path, e))?;
        let bad = |what: &str| Error::file(path, format!("row {}: {what}", row_no + 2));
        let t: TimeIndex = record[0].parse().map_err(|_| bad("invalid time index"))?;
        let expected = *start.get_or_insert(t) + row_no as TimeIndex;
        if t != expected {
            return Err(bad(&format!("time index {t} breaks unit spacing (expected {expected})")));
        }
        if has_provenance {
            provenance.push(Provenance::from_tag(&record[1]).ok_or_else(|| bad("provenance must be obs or pred"))?);
        } else {
            provenance.push(Provenance::Observed);
        }
        if record.len() != first_value + dim {
            return Err(bad("wrong number of columns"));
        }
        for field in record.iter().skip(first_value) {
            flat.push(field.parse::<f64>().map_err(|_| bad(&format!("invalid number `{field}`")))?);
        }
    }
    let n = provenance.len();
    Ok(Table {
        start: start.unwrap_or(0),
        provenance,
        values: Array2::from_shape_vec((n, dim), flat).expect("table shape"),
    })
}

pub fn read_series(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let table = read_table(path, "x")?;
    TimeSeries::new(table.start, table.values).map_err(|e| Error::file(path, e))
}

/// Reads either the plain score layout or the forecast layout.
pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSeries> {
    let path = path.as_ref();
    let table = read_table(path, "a")?;
    ScoreSeries::new(table.start, table.values, table.provenance).map_err(|e| Error::file(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, e))?;
    let headers = reader.headers().map_err(|e| Error::file(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["dim", "t"] {
        return Err(Error::file(path, "label header must be `dim,t`"));
    }
    let mut labels = LabelSet::new(0);
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::file(path, e))?;
        let bad = || Error::file(path, format!("row {}: invalid label", row_no + 2));
        let dim: usize = record[0].parse().map_err(|_| bad())?;
        let t: TimeIndex = record[1].parse().map_err(|_| bad())?;
        if dim == 0 {
            return Err(bad());
        }
        labels.insert(dim - 1, t);
    }
    Ok(labels)
}
