//! The student forecaster: per-window normalization, an inverted embedding
//! that turns each variable's whole history into one token, an encoder over
//! those tokens and a linear forecast head. It is the only model needed at
//! inference time.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, MAGIC_STUDENT};
use crate::error::{contract, shape_err, Result};
use crate::nn::{Dropout, Encoder, EncoderConfig, Linear};
use crate::revin::RevinStats;
use crate::tensor::{BoundParams, Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub history: usize,
    pub horizon: usize,
    pub n_vars: usize,
    pub encoder: EncoderConfig,
    /// Learnable per-variable scale and shift after normalization.
    pub revin_affine: bool,
    pub seed: u64,
}

/// Graph handles of one student forward pass.
pub struct StudentForward {
    /// `N×D_m` encoded variable tokens.
    pub t_h: Var,
    /// `N×N` head-averaged last-layer attention.
    pub a_tse: Var,
    /// `M×N` forecast in normalized space.
    pub forecast: Var,
}

#[derive(Debug, Clone)]
struct Affine {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct Student<T> {
    cfg: StudentConfig,
    store: ParamStore<T>,
    embed: Linear,
    encoder: Encoder,
    head: Linear,
    affine: Option<Affine>,
}

impl<T: Real> Student<T> {
    pub fn new(cfg: StudentConfig) -> Result<Self> {
        if cfg.history == 0 || cfg.horizon == 0 || cfg.n_vars == 0 {
            return Err(contract("student lengths and variable count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new(true);
        let dm = cfg.encoder.width;
        let std_h = 1.0 / (cfg.history as f64).sqrt();
        let embed = Linear::new(&mut store, "student.embed", cfg.history, dm, std_h, &mut rng);
        let encoder = Encoder::new(&mut store, "student.tst", cfg.encoder, &mut rng)?;
        let std_d = 1.0 / (dm as f64).sqrt();
        let head = Linear::new(&mut store, "student.head", dm, cfg.horizon, std_d, &mut rng);
        let affine = cfg.revin_affine.then(|| Affine {
            gamma: store.add("student.revin.gamma", Tensor::full([1, cfg.n_vars], T::one())),
            beta: store.add("student.revin.beta", Tensor::zeros([1, cfg.n_vars])),
        });
        Ok(Self {
            cfg,
            store,
            embed,
            encoder,
            head,
            affine,
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn numel(&self) -> usize {
        self.store.numel()
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.store.checksum()
    }

    pub fn embed(&self) -> &Linear {
        &self.embed
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Each variable's length-`H` series through the shared linear layer:
    /// `x̃ᵀ·W_i + b_i`, giving `N×D_m`.
    pub fn inverted_embed(&self, g: &mut Graph<T>, p: &BoundParams, x_norm: Var) -> Result<Var> {
        if g.shape(x_norm).first() != Some(&self.cfg.history) {
            return Err(shape_err(format!(
                "history {:?} for a model of length {}",
                g.shape(x_norm),
                self.cfg.history
            )));
        }
        let xt = g.transpose(x_norm)?;
        self.embed.forward(g, p, xt)
    }

    /// Returns `(T̄_H, A_TSE)`.
    pub fn tst_encode(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        tokens: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Var)> {
        let out = self.encoder.forward(g, p, tokens, dropout)?;
        Ok((out.tokens, out.attention))
    }

    fn broadcast_rows(&self, g: &mut Graph<T>, p: &BoundParams, id: ParamId, rows: usize) -> Result<Var> {
        g.gather_rows(p[id], &vec![0; rows])
    }

    /// Full forward from a normalized `H×N` history to an `M×N` normalized forecast.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x_norm: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<StudentForward> {
        let n = g.shape(x_norm).get(1).copied().unwrap_or(0);
        if n != self.cfg.n_vars {
            return Err(shape_err(format!("{n} variables for a model of {}", self.cfg.n_vars)));
        }
        let mut x = x_norm;
        if let Some(a) = &self.affine {
            let h = self.cfg.history;
            let gamma = self.broadcast_rows(g, p, a.gamma, h)?;
            let beta = self.broadcast_rows(g, p, a.beta, h)?;
            x = g.mul(x, gamma)?;
            x = g.add(x, beta)?;
        }
        let tokens = self.inverted_embed(g, p, x)?;
        let (t_h, a_tse) = self.tst_encode(g, p, tokens, dropout)?;
        let y = self.head.forward(g, p, t_h)?;
        let mut forecast = g.transpose(y)?;
        if let Some(a) = &self.affine {
            let m = self.cfg.horizon;
            let gamma = self.broadcast_rows(g, p, a.gamma, m)?;
            let beta = self.broadcast_rows(g, p, a.beta, m)?;
            forecast = g.sub(forecast, beta)?;
            forecast = g.div(forecast, gamma)?;
        }
        Ok(StudentForward {
            t_h,
            a_tse,
            forecast,
        })
    }

    /// Forecasts `M×N` raw values from a raw `H×N` history, dropout off.
    pub fn predict(&self, x_h: &Tensor<f64>) -> Result<Tensor<f64>> {
        let stats = RevinStats::of(x_h);
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.constant(stats.normalize(x_h));
        let f = self.forward(&mut g, &p, x, &mut Dropout::off())?;
        Ok(forecast(g.value(f.forecast), &stats))
    }

    /// Eval-mode `(T̄_H, A_TSE)` for a raw history.
    pub fn representations(&self, x_h: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let stats = RevinStats::of(x_h);
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let x = g.constant(stats.normalize(x_h));
        let f = self.forward(&mut g, &p, x, &mut Dropout::off())?;
        Ok((g.value(f.t_h).cast(), g.value(f.a_tse).cast()))
    }

    pub fn save(&self, path: &Path, echo: &str) -> Result<()> {
        checkpoint::save(path, MAGIC_STUDENT, echo, &self.store)
    }

    pub fn load(path: &Path, cfg: StudentConfig) -> Result<Self> {
        let mut s = Self::new(cfg)?;
        checkpoint::load(path, MAGIC_STUDENT)?.load_into(&mut s.store)?;
        Ok(s)
    }
}

/// Maps a normalized `M×N` forecast back to the input window's scale.
pub fn forecast<T: Real>(normalized: &Tensor<T>, stats: &RevinStats) -> Tensor<f64> {
    stats.denormalize(normalized)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(history: usize, affine: bool) -> StudentConfig {
        StudentConfig {
            history,
            horizon: 3,
            n_vars: 2,
            encoder: EncoderConfig {
                width: 4,
                layers: 1,
                heads: 2,
                ffn_hidden: 8,
            },
            revin_affine: affine,
            seed: 0,
        }
    }

    #[test]
    fn inverted_embedding_example() {
        let mut s = Student::<f64>::new(StudentConfig {
            n_vars: 1,
            encoder: EncoderConfig {
                width: 2,
                layers: 1,
                heads: 1,
                ffn_hidden: 2,
            },
            ..cfg(2, false)
        })
        .unwrap();
        // W_i = [[1, 1], [0, 1]] acting on column vectors; stored as in × out
        let w = s.embed().w;
        s.params_mut().set(w, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let p = s.params().bind(&mut g);
        let x = g.constant(Tensor::from_f64([2, 1], &[1.0, 2.0]).unwrap());
        let e = s.inverted_embed(&mut g, &p, x).unwrap();
        assert_eq!(g.value(e).data(), &[3.0, 2.0]);
    }

    #[test]
    fn zero_head_forecasts_history_mean() {
        let mut s = Student::<f64>::new(cfg(4, false)).unwrap();
        let w = s.head().w;
        s.params_mut().get_mut(w).data_mut().fill(0.0);
        let x = Tensor::from_f64([4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let y = s.predict(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        for r in 0..3 {
            assert!((y.at(r, 0) - 2.5).abs() < 1e-12);
            assert!((y.at(r, 1) - 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_affine_matches_plain_model() {
        let plain = Student::<f64>::new(cfg(4, false)).unwrap();
        let affine = Student::<f64>::new(cfg(4, true)).unwrap();
        assert_eq!(affine.numel(), plain.numel() + 4);
        let x = Tensor::from_f64([4, 2], &[1.0, 10.0, 2.5, 20.0, 3.0, 35.0, 4.0, 40.0]).unwrap();
        assert!(plain.predict(&x).unwrap().max_abs_diff(&affine.predict(&x).unwrap()) < 1e-12);
    }

    #[test]
    fn wrong_variable_count_rejected() {
        let s = Student::<f64>::new(cfg(4, false)).unwrap();
        let x = Tensor::zeros([4, 3]);
        assert_eq!(s.predict(&x).unwrap_err().kind(), "ShapeError");
    }
}
