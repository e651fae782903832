//! Forecast error metrics and their aggregation over seeds.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Mean squared error over all elements.
pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mse on unequal lengths");
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Mean absolute error over all elements.
pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "mae on unequal lengths");
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Running sums over many `M×N` forecasts, optionally dividing each
/// variable's error by a scale first.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    scale: Option<Vec<f64>>,
    sq: f64,
    abs: f64,
    count: usize,
    windows: usize,
}

impl ErrorAccumulator {
    pub fn new(scale: Option<Vec<f64>>) -> Self {
        Self {
            scale,
            sq: 0.0,
            abs: 0.0,
            count: 0,
            windows: 0,
        }
    }

    pub fn add(&mut self, pred: &Tensor<f64>, truth: &Tensor<f64>) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(contract(format!(
                "forecast {:?} against truth {:?}",
                pred.shape(),
                truth.shape()
            )));
        }
        let n = pred.cols();
        for (k, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
            let mut d = p - t;
            if let Some(s) = &self.scale {
                d /= s[k % n];
            }
            self.sq += d * d;
            self.abs += d.abs();
        }
        self.count += pred.len();
        self.windows += 1;
        Ok(())
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    pub fn mse(&self) -> f64 {
        self.sq / self.count as f64
    }

    pub fn mae(&self) -> f64 {
        self.abs / self.count as f64
    }
}

/// Test-set errors of one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Per-seed metrics with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub variant: String,
    pub horizon: usize,
    pub space: String,
    pub seeds: Vec<SeedMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn mse_mean_std(&self) -> (f64, f64) {
        mean_std(&self.seeds.iter().map(|s| s.mse).collect::<Vec<_>>())
    }

    pub fn mae_mean_std(&self) -> (f64, f64) {
        mean_std(&self.seeds.iter().map(|s| s.mae).collect::<Vec<_>>())
    }

    pub const CSV_HEADER: &'static str = "dataset,variant,horizon,space,seed,windows,mse,mae";

    /// CSV rows without a header: one per seed, then `mean` and `std`.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        let prefix = format!("{},{},{},{}", self.dataset, self.variant, self.horizon, self.space);
        for m in &self.seeds {
            writeln!(s, "{prefix},{},{},{},{}", m.seed, m.windows, m.mse, m.mae).unwrap();
        }
        let (mm, ms) = self.mse_mean_std();
        let (am, as_) = self.mae_mean_std();
        writeln!(s, "{prefix},mean,,{mm},{am}").unwrap();
        writeln!(s, "{prefix},std,,{ms},{as_}").unwrap();
        s
    }

    pub fn table(&self) -> String {
        let (mm, ms) = self.mse_mean_std();
        let (am, as_) = self.mae_mean_std();
        format!(
            "{:<12} {:<10} {:>4}  MSE {:.4} ± {:.4}  MAE {:.4} ± {:.4}  ({} seed{})",
            self.dataset,
            self.variant,
            self.horizon,
            mm,
            ms,
            am,
            as_,
            self.seeds.len(),
            if self.seeds.len() == 1 { "" } else { "s" }
        )
    }
}

/// Writes reports to one CSV with a header row.
pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut s = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in reports {
        if r.seeds.is_empty() {
            return Err(Error::Contract(format!("report {} has no seeds", r.variant)));
        }
        s.push_str(&r.csv_rows());
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
