//! CSV ingestion, chronological splits and sliding-window samples.

use std::ops::Range;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::revin::RevinStats;
use crate::tensor::Tensor;

/// A `T×N` multivariate series with one timestamp per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub freq: String,
    pub columns: Vec<String>,
    timestamps: Vec<String>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        freq: impl Into<String>,
        columns: Vec<String>,
        timestamps: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = columns.len();
        if n == 0 || values.len() != timestamps.len() * n {
            return Err(contract(format!(
                "{} values for {} rows of {n} columns",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Parse {
                line: i + 3,
                msg: format!("timestamp `{}` does not increase", timestamps[i + 1]),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(Self {
            name: name.into(),
            freq: freq.into(),
            columns,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_vars();
        &self.values[t * n..(t + 1) * n]
    }

    /// Rows `range` as an `L×N` matrix.
    pub fn rows(&self, range: Range<usize>) -> Tensor<f64> {
        let n = self.n_vars();
        Tensor::new(
            [range.len(), n],
            self.values[range.start * n..range.end * n].to_vec(),
        )
        .expect("rows within bounds")
    }

    pub fn whole(&self) -> Series<'_> {
        Series {
            dataset: self,
            range: 0..self.len(),
        }
    }

    /// Contiguous chronological train | val | test split.
    pub fn split(&self, ratios: SplitRatios) -> Splits<'_> {
        let t = self.len();
        let total = ratios.train + ratios.val + ratios.test;
        let n_train = (t as f64 * ratios.train / total).floor() as usize;
        let n_val = (t as f64 * ratios.val / total).floor() as usize;
        let view = |range| Series {
            dataset: self,
            range,
        };
        Splits {
            train: view(0..n_train),
            val: view(n_train..n_train + n_val),
            test: view(n_train + n_val..t),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for t in 0..self.len() {
            let mut rec = vec![self.timestamps[t].clone()];
            rec.extend(self.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Loads a CSV whose first column is a timestamp and whose remaining columns are
/// numbers. Missing and non-numeric cells are rejected, not imputed.
pub fn load_csv(path: &Path, name: &str, freq: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "need a timestamp column and at least one value column".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = columns.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        timestamps.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite cell `{cell}`"),
                });
            }
            values.push(v);
        }
    }
    Dataset::new(name, freq, columns, timestamps, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const ETT: SplitRatios = SplitRatios {
        train: 6.0,
        val: 2.0,
        test: 2.0,
    };
    pub const WEATHER_EXCHANGE: SplitRatios = SplitRatios {
        train: 7.0,
        val: 1.0,
        test: 2.0,
    };
}

impl std::str::FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts.as_slice() {
            &[train, val, test] if train > 0.0 && val >= 0.0 && test > 0.0 => {
                Ok(SplitRatios { train, val, test })
            }
            _ => Err(format!("split `{s}` must be three ratios a:b:c")),
        }
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

/// A contiguous row range of a dataset.
#[derive(Debug, Clone)]
pub struct Series<'a> {
    pub dataset: &'a Dataset,
    pub range: Range<usize>,
}

impl Series<'_> {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Splits<'a> {
    pub train: Series<'a>,
    pub val: Series<'a>,
    pub test: Series<'a>,
}

/// Keeps the first `ceil(p·len)` rows of a training split.
pub fn training_fraction<'a>(split: &Series<'a>, p: f64) -> Result<Series<'a>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(contract(format!("training fraction {p} outside (0, 1]")));
    }
    let keep = ((p * split.len() as f64).ceil() as usize).min(split.len());
    Ok(Series {
        dataset: split.dataset,
        range: split.range.start..split.range.start + keep,
    })
}

/// One sample: `H` history rows followed immediately by `G` ground-truth rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    /// Position of this window within its split's window list.
    pub index: usize,
    /// Absolute dataset row of the first history step.
    pub start: usize,
    pub x_h: Tensor<f64>,
    pub x_g: Tensor<f64>,
    pub stats: RevinStats,
}

impl TimeSeriesWindow {
    pub fn history_len(&self) -> usize {
        self.x_h.rows()
    }

    pub fn horizon(&self) -> usize {
        self.x_g.rows()
    }

    pub fn n_vars(&self) -> usize {
        self.x_h.cols()
    }

    /// Values of variable `j` over the history.
    pub fn history_of(&self, j: usize) -> Vec<f64> {
        (0..self.x_h.rows()).map(|t| self.x_h.at(t, j)).collect()
    }

    pub fn future_of(&self, j: usize) -> Vec<f64> {
        (0..self.x_g.rows()).map(|t| self.x_g.at(t, j)).collect()
    }
}

/// Number of windows [`make_windows`] yields for a split of length `len`.
pub fn window_count(len: usize, h: usize, g: usize, stride: usize) -> usize {
    if len < h + g || stride == 0 {
        0
    } else {
        (len - h - g) / stride + 1
    }
}

/// Sliding windows fully inside `split`, in chronological order.
pub fn make_windows(
    split: &Series<'_>,
    h: usize,
    g: usize,
    stride: usize,
) -> Result<Vec<TimeSeriesWindow>> {
    if h == 0 || g == 0 || stride == 0 {
        return Err(contract("history, horizon and stride must be positive"));
    }
    if split.len() < h + g {
        return Err(Error::InsufficientData {
            needed: h + g,
            have: split.len(),
        });
    }
    let count = window_count(split.len(), h, g, stride);
    Ok((0..count)
        .map(|index| {
            let start = split.range.start + index * stride;
            let x_h = split.dataset.rows(start..start + h);
            let x_g = split.dataset.rows(start + h..start + h + g);
            let stats = RevinStats::of(&x_h);
            TimeSeriesWindow {
                index,
                start,
                x_h,
                x_g,
                stats,
            }
        })
        .collect())
}
