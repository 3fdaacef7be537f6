//! Series tables, CSV input/output, chronological splits and scaling.

mod acf;
mod synth;
mod window;

pub use acf::{autocorrelation, detect_periods_acf, AcfPeak, AcfReport, ACF_THRESHOLD};
pub use synth::{synth_series, Component, SynthSpec};
pub use window::{make_windows, WindowedDataset};

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T × C` values in row-major order, with optional timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    dates: Option<Vec<String>>,
    columns: Vec<String>,
    values: Vec<f64>,
}

impl SeriesTable {
    pub fn new(columns: Vec<String>, values: Vec<f64>, dates: Option<Vec<String>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Data("a table needs at least one value column".into()));
        }
        if values.len() % columns.len() != 0 {
            return Err(Error::Data(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                columns.len()
            )));
        }
        let rows = values.len() / columns.len();
        if dates.as_ref().is_some_and(|d| d.len() != rows) {
            return Err(Error::Data("date column length differs from row count".into()));
        }
        Ok(Self { dates, columns, values })
    }

    /// Build from channel-major columns.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) || names.len() != columns.len() {
            return Err(Error::Data("columns differ in length".into()));
        }
        let values = (0..rows).flat_map(|t| columns.iter().map(move |c| c[t])).collect();
        Self::new(names, values, None)
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.columns.len()
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn dates(&self) -> Option<&[String]> {
        self.dates.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.channels();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels()).copied().collect()
    }

    /// Rows `[start, end)` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesTable {
        let c = self.channels();
        SeriesTable {
            dates: self.dates.as_ref().map(|d| d[start..end].to_vec()),
            columns: self.columns.clone(),
            values: self.values[start * c..end * c].to_vec(),
        }
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Data(format!("reading header: {e}")))?.clone();
        if header.is_empty() {
            return Err(Error::Data("empty file: no header row".into()));
        }
        let has_date = header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("date"));
        let skip = usize::from(has_date);
        let columns: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
        if columns.is_empty() {
            return Err(Error::Data("no value columns besides the date".into()));
        }
        let mut dates = has_date.then(Vec::new);
        let mut values = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
            if let Some(d) = dates.as_mut() {
                d.push(record.get(0).unwrap_or_default().to_string());
            }
            for (ci, cell) in record.iter().skip(skip).enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("row {row}, column '{}': '{cell}' is not a number", columns[ci]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "row {row}, column '{}': non-finite value '{cell}'",
                        columns[ci]
                    )));
                }
                values.push(v);
            }
        }
        if values.is_empty() {
            return Err(Error::Data("empty file: no data rows".into()));
        }
        Self::new(columns, values, dates)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Data(format!("writing csv: {e}"));
        let mut header: Vec<&str> = Vec::new();
        if self.dates.is_some() {
            header.push("date");
        }
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header).map_err(wrap)?;
        for t in 0..self.rows() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(d) = &self.dates {
                rec.push(d[t].clone());
            }
            rec.extend(self.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing csv: {e}")))
    }
}

pub fn load_csv(path: &Path) -> Result<SeriesTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    SeriesTable::from_reader(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_csv(path: &Path, table: &SeriesTable) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    table.to_writer(std::io::BufWriter::new(file))
}

/// Train/validation/test fractions of the series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::GENERIC
    }
}

impl SplitRatios {
    pub const GENERIC: SplitRatios = SplitRatios {
        train: 0.7,
        val: 0.1,
        test: 0.2,
    };
    pub const ETT: SplitRatios = SplitRatios {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };

    /// Row indices `[b₁, b₂, b₃]` ending each segment.
    pub fn boundaries(&self, rows: usize) -> Result<[usize; 3]> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) || self.train <= 0.0 {
            return Err(Error::Config(format!("split ratios must be non-negative with train > 0, got {r:?}")));
        }
        if r.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} sum past 1")));
        }
        let mut acc = 0.0;
        let mut out = [0; 3];
        for (o, v) in out.iter_mut().zip(r) {
            acc += v;
            *o = ((acc * rows as f64 + 1e-9).floor() as usize).min(rows);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: SeriesTable,
    pub val: SeriesTable,
    pub test: SeriesTable,
}

/// Contiguous train/val/test segments in time order.
///
/// Each segment must hold at least `min_len` rows. With `allow_empty`, a
/// segment whose ratio is zero may be empty instead.
pub fn chronological_split(table: &SeriesTable, ratios: SplitRatios, min_len: usize, allow_empty: bool) -> Result<Splits> {
    let [b1, b2, b3] = ratios.boundaries(table.rows())?;
    let spans = [("train", 0, b1), ("val", b1, b2), ("test", b2, b3)];
    for (name, start, end) in spans {
        let len = end - start;
        if len == 0 && allow_empty && name != "train" {
            continue;
        }
        if len < min_len.max(1) {
            return Err(Error::Data(format!(
                "{name} split has {len} rows, need at least {min_len} (look-back + horizon)"
            )));
        }
    }
    Ok(Splits {
        train: table.slice_rows(0, b1),
        val: table.slice_rows(b1, b2),
        test: table.slice_rows(b2, b3),
    })
}

/// Per-channel z-scoring fitted on one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population statistics; a constant channel gets unit scale.
    pub fn fit(table: &SeriesTable) -> Self {
        let (t, c) = (table.rows() as f64, table.channels());
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for (i, v) in table.values().iter().enumerate() {
            mean[i % c] += v / t;
        }
        for (i, v) in table.values().iter().enumerate() {
            std[i % c] += (v - mean[i % c]).powi(2) / t;
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, table: &SeriesTable) -> Result<()> {
        if table.channels() != self.mean.len() {
            return Err(Error::Data(format!(
                "scaler has {} channels, table has {}",
                self.mean.len(),
                table.channels()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, table: &SeriesTable) -> Result<SeriesTable> {
        self.check(table)?;
        let c = table.channels();
        let mut out = table.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        Ok(out)
    }

    pub fn inverse(&self, table: &SeriesTable) -> Result<SeriesTable> {
        self.check(table)?;
        let c = table.channels();
        let mut out = table.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        Ok(out)
    }

    /// Undo scaling on raw `[…, C]` values in place.
    pub fn inverse_values(&self, values: &mut [f64]) {
        let c = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
    }
}

/// Windowed train/validation/test sets plus the scaler fitted on train.
#[derive(Clone, Debug)]
pub struct DataBundle<T: crate::tensor::Float = f64> {
    pub train: WindowedDataset<T>,
    pub val: WindowedDataset<T>,
    pub test: WindowedDataset<T>,
    pub scaler: Scaler,
}

/// Split, optionally z-score with train statistics, and window every segment.
pub fn prepare_splits<T: crate::tensor::Float>(
    table: &SeriesTable,
    ratios: SplitRatios,
    lookback: usize,
    horizon: usize,
    standardize: bool,
    allow_empty: bool,
) -> Result<DataBundle<T>> {
    let splits = chronological_split(table, ratios, lookback + horizon, allow_empty)?;
    let scaler = if standardize {
        Scaler::fit(&splits.train)
    } else {
        Scaler::identity(table.channels())
    };
    let win = |t: &SeriesTable| -> Result<WindowedDataset<T>> {
        Ok(WindowedDataset::from_table(&scaler.transform(t)?, lookback, horizon))
    };
    Ok(DataBundle {
        train: win(&splits.train)?,
        val: win(&splits.val)?,
        test: win(&splits.test)?,
        scaler,
    })
}
