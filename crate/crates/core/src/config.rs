//! Run configuration: a UTF-8 text file of `key = value` lines. Blank lines
//! and lines starting with `#` are ignored; unknown keys are an error. Every
//! run writes its fully resolved configuration next to its outputs.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::clm::ClmConfig;
use crate::dataio::SplitRatios;
use crate::distill::LossWeights;
use crate::error::{Error, Result};
use crate::nn::EncoderConfig;
use crate::student::StudentConfig;
use crate::teacher::TeacherConfig;
use crate::tensor::{AdamWConfig, Precision};
use crate::training::TrainSettings;

/// Value of `data_path` that selects the built-in generator.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Teacher first, then the student against cached teacher outputs.
    Staged,
    /// Both models in one loop.
    Joint,
}

impl FromStr for TrainingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "staged" => Ok(Self::Staged),
            "joint" => Ok(Self::Joint),
            _ => Err(format!("expected `staged` or `joint`, got `{s}`")),
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Staged => "staged",
            Self::Joint => "joint",
        })
    }
}

/// Scale in which forecast errors are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsSpace {
    /// Errors divided by each variable's training-split standard deviation
    /// (squared for MSE), i.e. measured on standardized data.
    Normalized,
    /// Errors in the data's own units.
    Raw,
}

impl FromStr for MetricsSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "raw" => Ok(Self::Raw),
            _ => Err(format!("expected `normalized` or `raw`, got `{s}`")),
        }
    }
}

impl fmt::Display for MetricsSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normalized => "normalized",
            Self::Raw => "raw",
        })
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr, )*) => {
        /// Every setting of a run. Field names double as config-file keys.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| e.to_string())?;
                    } )*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// One `key = value` line per setting, in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( writeln!(s, "{} = {}", stringify!($field), self.$field).unwrap(); )*
                s
            }
        }
    };
}

run_config! {
    /// CSV path, or `synthetic` for the built-in generator.
    data_path: String = SYNTHETIC.to_string(),
    dataset_name: String = SYNTHETIC.to_string(),
    /// Sampling interval label used in prompts, e.g. `hour` or `15 minutes`.
    freq: String = "hour".to_string(),
    synth_seed: u64 = 0,
    synth_t: usize = 2000,
    synth_n: usize = 2,
    synth_noise: f64 = 0.05,
    history_len: usize = 96,
    horizon: usize = 24,
    split: SplitRatios = SplitRatios::ETT,
    /// Leading fraction of the training split that is used.
    train_fraction: f64 = 1.0,
    /// Window stride for training and validation.
    train_stride: usize = 1,
    /// Window stride for the test split.
    eval_stride: usize = 1,
    output_dir: String = "out".to_string(),
    seed: u64 = 0,
    precision: Precision = Precision::F32,
    clm_layers: usize = 12,
    clm_width: usize = 64,
    clm_heads: usize = 4,
    clm_ffn_mult: usize = 4,
    clm_max_len: usize = 2048,
    clm_seed: u64 = 0,
    /// Optional weight file replacing the seeded language model.
    clm_weights: String = String::new(),
    /// Cross-modality attention penalty.
    delta: f64 = std::f64::consts::LN_10,
    prompt_decimals: usize = crate::teacher::PROMPT_DECIMALS,
    model_width: usize = 64,
    encoder_layers: usize = 2,
    encoder_heads: usize = 4,
    ffn_mult: usize = 4,
    dropout: f64 = 0.1,
    lr: f64 = 1e-3,
    weight_decay: f64 = 0.0,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    batch_size: usize = 32,
    teacher_epochs: usize = 50,
    student_epochs: usize = 50,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    patience: usize = 5,
    lambda_r: f64 = 1.0,
    lambda_p: f64 = 1.0,
    lambda_c: f64 = 1.0,
    lambda_e: f64 = 1.0,
    lambda_f: f64 = 1.0,
    mode: TrainingMode = TrainingMode::Staged,
    /// Both language-model branches see only the history prompt.
    wo_pi: bool = false,
    /// No cross-modality penalty (`delta` treated as 0).
    wo_ca: bool = false,
    /// Trainable linear embeddings of the series replace the language model.
    wo_clm: bool = false,
    /// Plain subtraction replaces subtractive cross attention.
    wo_sca: bool = false,
    /// No correlation distillation.
    wo_cd: bool = false,
    /// No feature distillation.
    wo_fd: bool = false,
    metrics_space: MetricsSpace = MetricsSpace::Normalized,
    /// Training window whose maps `report` exports.
    report_window: usize = 0,
    cache_precision: Precision = Precision::F32,
    revin_affine: bool = false,
}

/// Keys whose values shape the teacher or its cache.
const TEACHER_KEYS: &[&str] = &[
    "data_path", "dataset_name", "freq", "synth_seed", "synth_t", "synth_n", "synth_noise",
    "history_len", "horizon", "split", "train_fraction", "train_stride", "seed", "precision",
    "clm_layers", "clm_width", "clm_heads", "clm_ffn_mult", "clm_max_len", "clm_seed",
    "clm_weights", "prompt_decimals", "model_width", "encoder_layers", "encoder_heads",
    "ffn_mult", "dropout", "lr", "weight_decay", "beta1", "beta2", "adam_eps", "batch_size",
    "teacher_epochs", "patience", "lambda_r", "mode", "wo_pi", "wo_clm", "wo_sca",
    "cache_precision",
];

impl RunConfig {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(fail(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim())
                .map_err(|e| fail(format!("{key}: {e}")))?;
        }
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut String| {
            if !p.is_empty() && Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        };
        if self.data_path != SYNTHETIC {
            join(&mut self.data_path);
        }
        join(&mut self.output_dir);
        join(&mut self.clm_weights);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.history_len < 2 {
            return bad("history_len must be at least 2".into());
        }
        if self.horizon == 0 || self.train_stride == 0 || self.eval_stride == 0 {
            return bad("horizon and strides must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction must be in (0, 1], got {}", self.train_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if self.encoder_heads == 0 || self.model_width % self.encoder_heads != 0 {
            return bad("model_width must be a multiple of encoder_heads".into());
        }
        if self.encoder_layers == 0 {
            return bad("encoder_layers must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.data_path == SYNTHETIC && (self.synth_n == 0 || self.synth_t == 0) {
            return bad("synthetic data needs synth_n and synth_t > 0".into());
        }
        self.weights()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.clm_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn output_path(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }

    pub fn effective_delta(&self) -> f64 {
        if self.wo_ca {
            0.0
        } else {
            self.delta
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_r: self.lambda_r,
            lambda_p: self.lambda_p,
            lambda_c: if self.wo_cd { 0.0 } else { self.lambda_c },
            lambda_e: if self.wo_fd { 0.0 } else { self.lambda_e },
            lambda_f: self.lambda_f,
        }
    }

    pub fn clm_config(&self) -> ClmConfig {
        ClmConfig {
            vocab_size: crate::prompting::Vocabulary::standard().len(),
            width: self.clm_width,
            layers: self.clm_layers,
            heads: self.clm_heads,
            ffn_mult: self.clm_ffn_mult,
            delta: self.effective_delta(),
            max_len: self.clm_max_len,
            seed: self.clm_seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            width: self.model_width,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            ffn_hidden: self.ffn_mult * self.model_width,
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            llm_width: self.clm_width,
            history: self.history_len,
            horizon: self.horizon,
            encoder: self.encoder_config(),
            sca: !self.wo_sca,
            privileged: !self.wo_pi,
            use_clm: !self.wo_clm,
            seed: self.seed,
        }
    }

    pub fn student_config(&self, n_vars: usize) -> StudentConfig {
        StudentConfig {
            history: self.history_len,
            horizon: self.horizon,
            n_vars,
            encoder: self.encoder_config(),
            revin_affine: self.revin_affine,
            seed: self.seed.wrapping_add(1),
        }
    }

    fn adam(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn teacher_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.teacher_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            dropout: self.dropout,
            seed: self.seed,
            adam: self.adam(),
        }
    }

    pub fn student_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.student_epochs,
            seed: self.seed.wrapping_add(1),
            ..self.teacher_settings()
        }
    }

    /// Settings stored in checkpoint headers. The output directory is left
    /// out so identical runs in different places write identical files.
    pub fn echo(&self) -> String {
        self.to_text()
            .lines()
            .filter(|l| !l.starts_with("output_dir = "))
            .map(|l| format!("{l}\n"))
            .collect()
    }

    /// Fingerprint of everything the teacher and its cache depend on.
    pub fn teacher_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for line in self.to_text().lines() {
            let key = line.split(" = ").next().unwrap_or("");
            if TEACHER_KEYS.contains(&key) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        h.update(format!("effective_delta = {}\n", self.effective_delta()).as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
