//! Reversible instance normalization: per-window, per-variable standardization
//! with an exact inverse for mapping forecasts back to the input's scale.

use crate::tensor::{Real, Tensor};

pub const REVIN_EPS: f64 = 1e-5;

/// Per-variable mean and stabilized standard deviation of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RevinStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RevinStats {
    /// Statistics over the rows of an `L×N` matrix (population variance).
    pub fn of(x: &Tensor<f64>) -> Self {
        let (rows, n) = (x.rows(), x.cols());
        let len = rows as f64;
        let mut mean = vec![0.0; n];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= len);
        let mut var = vec![0.0; n];
        for r in 0..rows {
            for j in 0..n {
                let d = x.at(r, j) - mean[j];
                var[j] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / len + REVIN_EPS).sqrt()).collect();
        Self { mean, std }
    }

    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes an `L×N` matrix with these statistics.
    pub fn normalize<T: Real>(&self, x: &Tensor<f64>) -> Tensor<T> {
        let n = x.cols();
        Tensor::from_fn(x.shape().to_vec(), |i| {
            let j = i % n;
            T::lit((x.data()[i] - self.mean[j]) / self.std[j])
        })
    }

    /// Inverse of [`RevinStats::normalize`].
    pub fn denormalize<T: Real>(&self, x: &Tensor<T>) -> Tensor<f64> {
        let n = x.cols();
        Tensor::from_fn(x.shape().to_vec(), |i| {
            let j = i % n;
            x.data()[i].as_f64() * self.std[j] + self.mean[j]
        })
    }
}

/// Normalizes `x` (`H×N`) and returns the statistics needed to invert it.
pub fn revin_normalize<T: Real>(x: &Tensor<f64>) -> (Tensor<T>, RevinStats) {
    let stats = RevinStats::of(x);
    (stats.normalize(x), stats)
}

pub fn revin_denormalize<T: Real>(x: &Tensor<T>, stats: &RevinStats) -> Tensor<f64> {
    stats.denormalize(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_series() {
        let x = Tensor::from_f64([3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let (y, stats) = revin_normalize::<f64>(&x);
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-3);
        assert!(y.data()[1].abs() < 1e-12);
        assert!((y.data()[2] - expect).abs() < 1e-3);
        assert_eq!(stats.mean, vec![2.0]);
    }

    #[test]
    fn constant_series_maps_to_zero() {
        let x = Tensor::from_f64([4, 2], &[7.0, -1.0, 7.0, -1.0, 7.0, -1.0, 7.0, -1.0]).unwrap();
        let (y, _) = revin_normalize::<f32>(&x);
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn round_trip_f32() {
        let x = Tensor::from_f64([5, 2], &[0.1, 10.0, 0.4, 12.0, -0.3, 9.5, 0.2, 11.0, 0.0, 10.5])
            .unwrap();
        let (y, stats) = revin_normalize::<f32>(&x);
        let back = revin_denormalize(&y, &stats);
        assert!(back.max_abs_diff(&x) < 1e-5);
    }
}
