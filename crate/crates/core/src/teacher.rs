//! The privileged teacher: language-model embeddings of history and
//! ground-truth prompts, subtractive cross attention, an encoder over variable
//! tokens, and a reconstruction head for the future values.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, MAGIC_TEACHER};
use crate::clm::Clm;
use crate::dataio::TimeSeriesWindow;
use crate::error::{contract, shape_err, Error, Result};
use crate::nn::{Dropout, Encoder, EncoderConfig, Linear};
use crate::prompting::{render_groundtruth_prompt, render_history_prompt, Tokenizer};
use crate::sca::{plain_subtraction, ScaParams};
use crate::tensor::{AdamW, BoundParams, Graph, ParamStore, Real, Tensor, Var};
use crate::training::{shuffled_batches, EarlyStop, TrainLog, TrainSettings, Verdict};

/// Default decimal places used when rendering values into prompts.
pub const PROMPT_DECIMALS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    /// Width `D` of the language-model embeddings.
    pub llm_width: usize,
    pub history: usize,
    pub horizon: usize,
    pub encoder: EncoderConfig,
    /// `false` replaces subtractive cross attention with `l_gt − l_hd`.
    pub sca: bool,
    /// `false` feeds the history prompt to both branches.
    pub privileged: bool,
    /// `false` replaces the language model with trainable linear embeddings
    /// of the normalized series.
    pub use_clm: bool,
    pub seed: u64,
}

impl TeacherConfig {
    fn validate(&self) -> Result<()> {
        if self.llm_width == 0 || self.history == 0 || self.horizon == 0 {
            return Err(contract("teacher widths and lengths must be positive"));
        }
        if self.encoder.layers == 0 {
            return Err(contract("teacher encoder needs at least one layer"));
        }
        Ok(())
    }
}

/// Teacher inputs for one window, before any trainable layer.
#[derive(Debug, Clone)]
pub enum TeacherFeatures<T> {
    /// Last-token embeddings of the two prompts, each `N×D`.
    Clm { l_gt: Tensor<T>, l_hd: Tensor<T> },
    /// Normalized series with variables as rows: ground truth `N×(H+G)`
    /// (`N×H` without privileged information) and history `N×H`.
    Series { gt: Tensor<T>, hd: Tensor<T> },
}

/// A window prepared for the teacher.
#[derive(Debug, Clone)]
pub struct TeacherSample<T> {
    pub index: usize,
    pub features: TeacherFeatures<T>,
    /// Future values normalized with the history's statistics, `G×N`.
    pub target: Tensor<T>,
}

/// Per-window teacher outputs kept for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedArtifact {
    pub index: usize,
    /// `N×D_m` teacher embeddings.
    pub e_gt: Tensor<f64>,
    /// `N×N` head-averaged last-layer attention.
    pub a_pe: Tensor<f64>,
}

/// Future values of a window in its history's normalized space.
pub fn normalized_target<T: Real>(w: &TimeSeriesWindow) -> Tensor<T> {
    w.stats.normalize(&w.x_g)
}

/// Embeds both prompts of every variable with the frozen language model.
pub fn clm_features<T: Real>(
    clm: &Clm<T>,
    tokenizer: &Tokenizer,
    window: &TimeSeriesWindow,
    freq: &str,
    decimals: usize,
    privileged: bool,
) -> Result<TeacherFeatures<T>> {
    let n = window.n_vars();
    let mut hd = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    for j in 0..n {
        let history = window.history_of(j);
        let p = render_history_prompt(&history, freq, window.horizon(), decimals)?;
        hd.push(tokenizer.tokenize_rendered(&p));
        if privileged {
            let p = render_groundtruth_prompt(&history, &window.future_of(j), freq, decimals)?;
            gt.push(tokenizer.tokenize_rendered(&p));
        }
    }
    let l_hd = clm.last_tokens(&hd)?;
    let l_gt = if privileged {
        clm.last_tokens(&gt)?
    } else {
        l_hd.clone()
    };
    Ok(TeacherFeatures::Clm { l_gt, l_hd })
}

/// Normalized series features for the configuration without a language model.
pub fn series_features<T: Real>(window: &TimeSeriesWindow, privileged: bool) -> TeacherFeatures<T> {
    let hd: Tensor<T> = window.stats.normalize(&window.x_h);
    let hd = hd.transpose().expect("matrix");
    let gt = if privileged {
        let fut: Tensor<T> = window.stats.normalize(&window.x_g);
        let fut = fut.transpose().expect("matrix");
        let (n, h, g) = (window.n_vars(), window.history_len(), window.horizon());
        Tensor::from_fn([n, h + g], |k| {
            let (r, c) = (k / (h + g), k % (h + g));
            if c < h {
                hd.at(r, c)
            } else {
                fut.at(r, c - h)
            }
        })
    } else {
        hd.clone()
    };
    TeacherFeatures::Series { gt, hd }
}

/// Where teacher features come from.
pub enum FeatureSource<'a, T> {
    Clm {
        clm: &'a Clm<T>,
        tokenizer: &'a Tokenizer,
        freq: &'a str,
        decimals: usize,
    },
    Series,
}

/// Prepares teacher samples. With a language model this is the expensive
/// step; the model is frozen, so each window is encoded exactly once.
pub fn prepare_samples<T: Real>(
    windows: &[TimeSeriesWindow],
    source: &FeatureSource<'_, T>,
    privileged: bool,
) -> Result<Vec<TeacherSample<T>>> {
    windows
        .iter()
        .map(|w| {
            let features = match source {
                FeatureSource::Clm {
                    clm,
                    tokenizer,
                    freq,
                    decimals,
                } => clm_features(clm, tokenizer, w, freq, *decimals, privileged)?,
                FeatureSource::Series => series_features(w, privileged),
            };
            Ok(TeacherSample {
                index: w.index,
                features,
                target: normalized_target(w),
            })
        })
        .collect()
}

/// Graph handles of one teacher forward pass.
pub struct TeacherForward {
    pub l_bar: Var,
    pub e_gt: Var,
    pub a_pe: Var,
    /// `G×N` reconstruction.
    pub recon: Var,
}

#[derive(Debug, Clone)]
pub struct Teacher<T> {
    cfg: TeacherConfig,
    store: ParamStore<T>,
    embed_gt: Option<Linear>,
    embed_hd: Option<Linear>,
    sca: Option<ScaParams>,
    proj: Linear,
    encoder: Encoder,
    head: Linear,
}

fn fan_in_std(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

impl<T: Real> Teacher<T> {
    pub fn new(cfg: TeacherConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new(true);
        let d = cfg.llm_width;
        let (embed_gt, embed_hd) = if cfg.use_clm {
            (None, None)
        } else {
            let gt_len = if cfg.privileged {
                cfg.history + cfg.horizon
            } else {
                cfg.history
            };
            (
                Some(Linear::new(&mut store, "teacher.embed_gt", gt_len, d, fan_in_std(gt_len), &mut rng)),
                Some(Linear::new(
                    &mut store,
                    "teacher.embed_hd",
                    cfg.history,
                    d,
                    fan_in_std(cfg.history),
                    &mut rng,
                )),
            )
        };
        let sca = cfg.sca.then(|| {
            let hidden = cfg.encoder.ffn_hidden / cfg.encoder.width.max(1) * d;
            ScaParams::new(&mut store, "teacher.sca", d, hidden.max(1), &mut rng)
        });
        let dm = cfg.encoder.width;
        let proj = Linear::new(&mut store, "teacher.proj", d, dm, fan_in_std(d), &mut rng);
        let encoder = Encoder::new(&mut store, "teacher.pt", cfg.encoder, &mut rng)?;
        let head = Linear::new(&mut store, "teacher.head", dm, cfg.horizon, fan_in_std(dm), &mut rng);
        Ok(Self {
            cfg,
            store,
            embed_gt,
            embed_hd,
            sca,
            proj,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
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

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Projects purified embeddings to the model width and encodes them:
    /// returns `(E_GT, A_PE)`.
    pub fn pt_encode(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        l_bar: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Var)> {
        let x = self.proj.forward(g, p, l_bar)?;
        let out = self.encoder.forward(g, p, x, dropout)?;
        Ok((out.tokens, out.attention))
    }

    /// Maps `N×D_m` embeddings to a `G×N` reconstruction.
    pub fn reconstruct(&self, g: &mut Graph<T>, p: &BoundParams, e_gt: Var) -> Result<Var> {
        let y = self.head.forward(g, p, e_gt)?;
        g.transpose(y)
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        features: &TeacherFeatures<T>,
        dropout: &mut Dropout<'_>,
    ) -> Result<TeacherForward> {
        let (l_gt, l_hd) = match features {
            TeacherFeatures::Clm { l_gt, l_hd } => {
                if !self.cfg.use_clm {
                    return Err(contract("teacher was built without a language model"));
                }
                (g.constant(l_gt.clone()), g.constant(l_hd.clone()))
            }
            TeacherFeatures::Series { gt, hd } => {
                let (Some(eg), Some(eh)) = (&self.embed_gt, &self.embed_hd) else {
                    return Err(contract("teacher expects language-model features"));
                };
                let gt = g.constant(gt.clone());
                let hd = g.constant(hd.clone());
                (eg.forward(g, p, gt)?, eh.forward(g, p, hd)?)
            }
        };
        if g.shape(l_gt).last() != Some(&self.cfg.llm_width) {
            return Err(shape_err(format!(
                "embeddings {:?} for width {}",
                g.shape(l_gt),
                self.cfg.llm_width
            )));
        }
        let l_bar = match &self.sca {
            Some(sca) => sca.forward(g, p, l_gt, l_hd)?,
            None => plain_subtraction(g, l_gt, l_hd)?,
        };
        let (e_gt, a_pe) = self.pt_encode(g, p, l_bar, dropout)?;
        let recon = self.reconstruct(g, p, e_gt)?;
        Ok(TeacherForward {
            l_bar,
            e_gt,
            a_pe,
            recon,
        })
    }

    /// One forward and backward pass whose gradient, scaled by `weight`, is
    /// added to the parameter accumulators. Returns the unscaled loss and the
    /// detached `(E_GT, A_PE)`.
    pub fn accumulate(
        &mut self,
        sample: &TeacherSample<T>,
        weight: f64,
        dropout: &mut Dropout<'_>,
    ) -> Result<(f64, Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let f = self.forward(&mut g, &p, &sample.features, dropout)?;
        let target = g.constant(sample.target.clone());
        let loss = reconstruction_loss(&mut g, f.recon, target)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "teacher reconstruction loss {value} on window {}",
                sample.index
            )));
        }
        let scaled = g.scale(loss, T::lit(weight));
        let grads = g.backward(scaled)?;
        self.store.accumulate(&p, &grads);
        Ok((
            value,
            g.value(f.e_gt).detached(),
            g.value(f.a_pe).detached(),
        ))
    }

    /// Reconstruction loss with dropout off.
    pub fn eval_loss(&self, sample: &TeacherSample<T>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let f = self.forward(&mut g, &p, &sample.features, &mut Dropout::off())?;
        let target = g.constant(sample.target.clone());
        let loss = reconstruction_loss(&mut g, f.recon, target)?;
        Ok(g.value(loss).item().as_f64())
    }

    /// Frozen pass producing the distillation targets for one window.
    pub fn artifact(&self, sample: &TeacherSample<T>) -> Result<PrivilegedArtifact> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let f = self.forward(&mut g, &p, &sample.features, &mut Dropout::off())?;
        Ok(PrivilegedArtifact {
            index: sample.index,
            e_gt: g.value(f.e_gt).cast(),
            a_pe: g.value(f.a_pe).cast(),
        })
    }

    pub fn save(&self, path: &Path, echo: &str) -> Result<()> {
        checkpoint::save(path, MAGIC_TEACHER, echo, &self.store)
    }

    /// Builds a teacher for `cfg` and loads its parameters from `path`.
    pub fn load(path: &Path, cfg: TeacherConfig) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        checkpoint::load(path, MAGIC_TEACHER)?.load_into(&mut t.store)?;
        Ok(t)
    }
}

/// Mean SmoothL1 over all `G×N` elements.
pub fn reconstruction_loss<T: Real>(g: &mut Graph<T>, xhat: Var, x: Var) -> Result<Var> {
    g.smooth_l1(xhat, x)
}

fn mean_eval_loss<T: Real>(teacher: &Teacher<T>, samples: &[TeacherSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += teacher.eval_loss(s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains on `train`, stopping early on the validation reconstruction loss,
/// and leaves the best epoch's parameters in place. With no validation
/// samples the training samples are used for model selection.
pub fn train_teacher<T: Real>(
    teacher: &mut Teacher<T>,
    train: &[TeacherSample<T>],
    val: &[TeacherSample<T>],
    settings: &TrainSettings,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let val = if val.is_empty() { train } else { val };
    let mut order_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5eed_d509);
    let mut opt = AdamW::new(settings.adam);
    let mut stop = EarlyStop::new(settings.patience);
    let mut best = teacher.store.clone();
    let mut log = TrainLog::default();
    teacher.store.zero_grad();
    for epoch in 0..settings.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(train.len(), settings.batch_size, &mut order_rng) {
            let weight = 1.0 / batch.len() as f64;
            for &i in &batch {
                let mut dropout = Dropout::train(settings.dropout, &mut drop_rng);
                let (loss, _, _) = teacher.accumulate(&train[i], weight, &mut dropout)?;
                epoch_loss += loss;
            }
            opt.step(&mut teacher.store)?;
            log.steps += 1;
        }
        log.train_loss.push(epoch_loss / train.len() as f64);
        let v = mean_eval_loss(teacher, val)?;
        log.val_loss.push(v);
        match stop.observe(epoch, v) {
            Verdict::Improved => best = teacher.store.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stop.best_epoch();
    teacher.store.copy_values_from(&best)?;
    teacher.store.zero_grad();
    Ok(log)
}

/// Distillation targets for every sample, in sample order.
pub fn teacher_artifacts<T: Real>(
    teacher: &Teacher<T>,
    samples: &[TeacherSample<T>],
) -> Result<Vec<PrivilegedArtifact>> {
    samples.iter().map(|s| teacher.artifact(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_windows, Dataset};

    fn cfg(use_clm: bool, sca: bool) -> TeacherConfig {
        TeacherConfig {
            llm_width: 8,
            history: 4,
            horizon: 3,
            encoder: EncoderConfig {
                width: 8,
                layers: 1,
                heads: 2,
                ffn_hidden: 16,
            },
            sca,
            privileged: true,
            use_clm,
            seed: 1,
        }
    }

    fn windows() -> Vec<TimeSeriesWindow> {
        let t = 20;
        let values: Vec<f64> = (0..t)
            .flat_map(|i| [(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos() * 2.0])
            .collect();
        let ds = Dataset::new(
            "toy",
            "hour",
            vec!["a".into(), "b".into()],
            (0..t).map(|i| format!("{i:04}")).collect(),
            values,
        )
        .unwrap();
        make_windows(&ds.whole(), 4, 3, 1).unwrap()
    }

    #[test]
    fn single_variable_attention_is_one() {
        let t = Teacher::<f64>::new(cfg(true, true)).unwrap();
        let mut g = Graph::new();
        let p = t.params().bind(&mut g);
        let x = g.constant(Tensor::from_f64([1, 8], &[0.1, -0.2, 0.3, 0.0, 0.5, 0.1, -0.4, 0.2]).unwrap());
        let (e, a) = t.pt_encode(&mut g, &p, x, &mut Dropout::off()).unwrap();
        assert_eq!(g.shape(e), &[1, 8]);
        assert_eq!(g.value(a).data(), &[1.0]);
    }

    #[test]
    fn zero_head_reconstructs_zero() {
        let mut t = Teacher::<f64>::new(cfg(true, true)).unwrap();
        let head = t.head().clone();
        t.params_mut().get_mut(head.w).data_mut().fill(0.0);
        let mut g = Graph::new();
        let p = t.params().bind(&mut g);
        let e = g.constant(Tensor::full([2, 8], 0.7));
        let r = t.reconstruct(&mut g, &p, e).unwrap();
        assert_eq!(g.shape(r), &[3, 2]);
        assert!(g.value(r).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_layer_encoder_rejected() {
        let mut c = cfg(true, true);
        c.encoder.layers = 0;
        assert_eq!(Teacher::<f64>::new(c).unwrap_err().kind(), "ContractError");
    }

    #[test]
    fn series_features_layout() {
        let w = &windows()[0];
        let TeacherFeatures::Series { gt, hd } = series_features::<f64>(w, true) else {
            unreachable!()
        };
        assert_eq!(gt.shape(), &[2, 7]);
        assert_eq!(hd.shape(), &[2, 4]);
        assert_eq!(&gt.row(1)[..4], hd.row(1));
        let target: Tensor<f64> = normalized_target(w);
        assert_eq!(gt.at(0, 4), target.at(0, 0));
    }

    #[test]
    fn training_without_clm_reduces_loss_and_keeps_best() {
        let ws = windows();
        let samples = prepare_samples::<f64>(&ws, &FeatureSource::Series, true).unwrap();
        for sca in [true, false] {
            let mut t = Teacher::new(cfg(false, sca)).unwrap();
            let before = mean_eval_loss(&t, &samples).unwrap();
            let settings = TrainSettings {
                epochs: 15,
                batch_size: 4,
                dropout: 0.0,
                adam: crate::tensor::AdamWConfig {
                    lr: 1e-2,
                    ..Default::default()
                },
                ..Default::default()
            };
            let log = train_teacher(&mut t, &samples, &[], &settings).unwrap();
            let after = mean_eval_loss(&t, &samples).unwrap();
            assert!(after < before, "{after} !< {before}");
            assert_eq!(Some(after), log.best_val());
            let arts = teacher_artifacts(&t, &samples).unwrap();
            assert_eq!(arts.len(), samples.len());
            for r in 0..2 {
                assert!((arts[0].a_pe.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_loss_half_residuals() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full([3, 2], 0.5));
        let b = g.constant(Tensor::zeros([3, 2]));
        let l = reconstruction_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), 0.125);
    }
}
