//! Helpers shared by the integration tests: seeded random tensors, a
//! central-difference gradient checker and small run configurations.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timekd::config::RunConfig;
use timekd::tensor::{BoundParams, Graph, ParamStore, Precision, Tensor, Var};
use timekd::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[0.5, 1.5]` and random sign, safe as divisors.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.5..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any output into a scalar loss
/// whose gradient exercises every output element.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = uniform(g.shape(out), -1.0, 1.0, &mut r);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Result of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct FdCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)`.
    pub rel: f64,
    pub coords: usize,
}

/// Compares the tape's gradient with central differences for every input
/// element and every parameter the loss depends on. `build` must be a pure
/// function of its inputs and the store's values.
pub fn fd_check(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &BoundParams, &[Var]) -> Result<Var>,
) -> Result<FdCheck> {
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&mut g, &p, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &p, &vars)?;
    let grads = g.backward(loss)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        match grads.wrt(v) {
            Some(gr) => analytic.extend_from_slice(gr),
            None => analytic.extend(std::iter::repeat_n(0.0, n)),
        }
        for k in 0..n {
            let x0 = work[i].data()[k];
            work[i].data_mut()[k] = x0 + FD_STEP;
            let up = eval(store, &work)?;
            work[i].data_mut()[k] = x0 - FD_STEP;
            let down = eval(store, &work)?;
            work[i].data_mut()[k] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }

    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let id = store.id_of(&name).expect("known name");
        let Some(gr) = grads.wrt(p[id]) else {
            continue;
        };
        analytic.extend_from_slice(gr);
        for k in 0..store.get(id).len() {
            let x0 = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = x0 + FD_STEP;
            let up = eval(store, inputs)?;
            store.get_mut(id).data_mut()[k] = x0 - FD_STEP;
            let down = eval(store, inputs)?;
            store.get_mut(id).data_mut()[k] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }

    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let denom = norm(&analytic).max(norm(&numeric)).max(1e-6);
    Ok(FdCheck {
        rel: norm(&diff) / denom,
        coords: analytic.len(),
    })
}

/// A small configuration that trains in seconds. Outputs go to `dir`.
pub fn tiny_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.synth_t = 400;
    c.history_len = 12;
    c.horizon = 6;
    c.train_stride = 5;
    c.eval_stride = 3;
    c.clm_layers = 1;
    c.clm_width = 16;
    c.clm_heads = 2;
    c.model_width = 16;
    c.encoder_layers = 1;
    c.encoder_heads = 2;
    c.teacher_epochs = 3;
    c.student_epochs = 3;
    c.batch_size = 8;
    c.precision = Precision::F64;
    c.output_dir = dir.to_string_lossy().into_owned();
    c
}

/// Writes `cfg` where the command line can read it back.
pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_text()).expect("write config");
}
