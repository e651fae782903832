//! Seeded synthetic multivariate series for tests and benchmarks.
//!
//! Each variable is a sum of two or three sinusoids with integer periods
//! dividing 48 steps, plus Gaussian noise. Variable `j` also carries a lagged,
//! scaled copy of variable `j-1`, so attention across variables has something
//! to find. With zero noise every series is exactly periodic.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::Dataset;
use crate::error::{contract, Result};

/// Common period of every clean synthetic series.
pub const SYNTH_PERIOD: i64 = 48;
const PERIODS: [i64; 5] = [6, 12, 16, 24, 48];
const COUPLING: f64 = 0.5;

#[derive(Debug, Clone)]
struct Component {
    period: i64,
    amplitude: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct Variable {
    offset: f64,
    components: Vec<Component>,
    lag: i64,
}

fn clean(vars: &[Variable], j: usize, t: i64) -> f64 {
    let v = &vars[j];
    let own: f64 = v
        .components
        .iter()
        .map(|c| {
            let k = t.rem_euclid(c.period) as f64;
            c.amplitude * (std::f64::consts::TAU * k / c.period as f64 + c.phase).sin()
        })
        .sum();
    let coupled = if j == 0 {
        0.0
    } else {
        COUPLING * (clean(vars, j - 1, t - v.lag) - vars[j - 1].offset)
    };
    v.offset + own + coupled
}

/// `t` hourly rows of `n` variables starting 2016-07-01 00:00.
pub fn synth_dataset(seed: u64, t: usize, n: usize, noise: f64) -> Result<Dataset> {
    if t == 0 || n == 0 || !(noise >= 0.0) {
        return Err(contract("synthetic data needs t > 0, n > 0 and noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<Variable> = (0..n)
        .map(|j| {
            let k = rng.random_range(2..=3);
            Variable {
                offset: 10.0 + 5.0 * j as f64,
                components: (0..k)
                    .map(|_| Component {
                        period: PERIODS[rng.random_range(0..PERIODS.len())],
                        amplitude: rng.random_range(0.5..2.0),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect(),
                lag: rng.random_range(1..=6),
            }
        })
        .collect();
    let dist = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut values = Vec::with_capacity(t * n);
    for step in 0..t as i64 {
        for j in 0..n {
            let eps = if noise > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            values.push(clean(&vars, j, step) + eps);
        }
    }
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let timestamps = (0..t as i64)
        .map(|h| (start + Duration::hours(h)).format("%Y-%m-%d %H:%M:%S").to_string())
        .collect();
    let columns = (0..n).map(|j| format!("v{j}")).collect();
    Dataset::new("synthetic", "hour", columns, timestamps, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = synth_dataset(7, 100, 3, 0.1).unwrap();
        let b = synth_dataset(7, 100, 3, 0.1).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(8, 100, 3, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_series_is_exactly_periodic() {
        let d = synth_dataset(3, 200, 3, 0.0).unwrap();
        let p = SYNTH_PERIOD as usize;
        for t in 0..200 - p {
            assert_eq!(d.row(t), d.row(t + p));
        }
    }

    #[test]
    fn default_benchmark_shape() {
        let d = synth_dataset(0, 2000, 2, 0.05).unwrap();
        assert_eq!((d.len(), d.n_vars()), (2000, 2));
        assert_eq!(d.timestamps()[1], "2016-07-01 01:00:00");
    }
}
