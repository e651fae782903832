//! End-to-end runs shared by the command line and the tests: data
//! preparation, teacher training and caching, distillation, evaluation,
//! forecasting, map export and multi-seed benchmarks.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cache::{cache_write, CacheReader};
use crate::clm::Clm;
use crate::config::{MetricsSpace, RunConfig, TrainingMode, SYNTHETIC};
use crate::dataio::{load_csv, make_windows, training_fraction, window_count, Dataset, Series, TimeSeriesWindow};
use crate::distill::{student_samples, train_joint, train_student, ArtifactSource};
use crate::error::{contract, Error, Result};
use crate::metrics::{write_metrics_csv, ErrorAccumulator, MetricsReport, SeedMetrics};
use crate::prompting::Tokenizer;
use crate::report;
use crate::student::Student;
use crate::synth::synth_dataset;
use crate::teacher::{
    prepare_samples, teacher_artifacts, train_teacher, FeatureSource, PrivilegedArtifact, Teacher,
    TeacherFeatures, TeacherSample,
};
use crate::tensor::{Precision, Real};
use crate::training::TrainLog;

pub const TEACHER_FILE: &str = "teacher.tkdt";
pub const CLM_FILE: &str = "clm.tkdw";
pub const CACHE_FILE: &str = "teacher.tkdc";
pub const STUDENT_FILE: &str = "student.tkds";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

/// Every ablation the benchmark knows, in report order.
pub const VARIANTS: &[&str] = &["full", "no_pkd", "wo_ca", "wo_sca", "wo_cd", "wo_fd", "wo_pi", "wo_clm"];

/// The dataset and its windows, ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub train: Vec<TimeSeriesWindow>,
    /// Empty when the validation split is shorter than one window.
    pub val: Vec<TimeSeriesWindow>,
    pub test: Vec<TimeSeriesWindow>,
    /// Population standard deviation of each variable over the training split.
    pub train_std: Vec<f64>,
    pub split_rows: [usize; 3],
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.data_path == SYNTHETIC {
        synth_dataset(cfg.synth_seed, cfg.synth_t, cfg.synth_n, cfg.synth_noise)
    } else {
        load_csv(Path::new(&cfg.data_path), &cfg.dataset_name, &cfg.freq)
    }
}

fn column_std(s: &Series<'_>) -> Vec<f64> {
    let x = s.dataset.rows(s.range.clone());
    let rows = x.rows() as f64;
    (0..x.cols())
        .map(|j| {
            let mean = (0..x.rows()).map(|t| x.at(t, j)).sum::<f64>() / rows;
            let var = (0..x.rows()).map(|t| (x.at(t, j) - mean).powi(2)).sum::<f64>() / rows;
            let sd = var.sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

fn optional_windows(s: &Series<'_>, h: usize, g: usize, stride: usize) -> Result<Vec<TimeSeriesWindow>> {
    if window_count(s.len(), h, g, stride) == 0 {
        Ok(Vec::new())
    } else {
        make_windows(s, h, g, stride)
    }
}

pub fn prepare(cfg: &RunConfig, dataset: Dataset) -> Result<PreparedData> {
    let (h, g) = (cfg.history_len, cfg.horizon);
    let splits = dataset.split(cfg.split);
    let train_split = training_fraction(&splits.train, cfg.train_fraction)?;
    let train = make_windows(&train_split, h, g, cfg.train_stride)?;
    let val = optional_windows(&splits.val, h, g, cfg.train_stride)?;
    let test = make_windows(&splits.test, h, g, cfg.eval_stride)?;
    let train_std = column_std(&splits.train);
    let split_rows = [splits.train.len(), splits.val.len(), splits.test.len()];
    Ok(PreparedData {
        train,
        val,
        test,
        train_std,
        split_rows,
        dataset,
    })
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    prepare(cfg, load_dataset(cfg)?)
}

/// One-line description of a validated dataset.
pub fn ingest_summary(data: &PreparedData) -> String {
    let [tr, va, te] = data.split_rows;
    format!(
        "dataset={} rows={} n_vars={} split_rows={tr}/{va}/{te} windows={}/{}/{}",
        data.dataset.name,
        data.dataset.len(),
        data.dataset.n_vars(),
        data.train.len(),
        data.val.len(),
        data.test.len()
    )
}

/// The configured language model, with imported weights when a weight file
/// is set.
pub fn build_clm<T: Real>(cfg: &RunConfig) -> Result<Clm<T>> {
    let mut clm = Clm::new(cfg.clm_config())?;
    if !cfg.clm_weights.is_empty() {
        clm.import_weights(Path::new(&cfg.clm_weights))?;
    }
    Ok(clm)
}

/// Teacher samples for the training and validation windows.
#[derive(Debug, Clone)]
pub struct TeacherInputs<T> {
    pub train: Vec<TeacherSample<T>>,
    pub val: Vec<TeacherSample<T>>,
}

fn features_for<T: Real>(
    cfg: &RunConfig,
    clm: Option<&Clm<T>>,
    windows: &[TimeSeriesWindow],
    privileged: bool,
) -> Result<Vec<TeacherSample<T>>> {
    let tokenizer = Tokenizer::default();
    let source = match clm {
        Some(clm) => FeatureSource::Clm {
            clm,
            tokenizer: &tokenizer,
            freq: &cfg.freq,
            decimals: cfg.prompt_decimals,
        },
        None => FeatureSource::Series,
    };
    prepare_samples(windows, &source, privileged)
}

/// Builds teacher samples as configured. The language model, if any, is
/// returned so callers can check that it stayed frozen.
pub fn teacher_inputs<T: Real>(cfg: &RunConfig, data: &PreparedData) -> Result<(TeacherInputs<T>, Option<Clm<T>>)> {
    let clm = if cfg.wo_clm { None } else { Some(build_clm::<T>(cfg)?) };
    let inputs = TeacherInputs {
        train: features_for(cfg, clm.as_ref(), &data.train, !cfg.wo_pi)?,
        val: features_for(cfg, clm.as_ref(), &data.val, !cfg.wo_pi)?,
    };
    Ok((inputs, clm))
}

/// The same samples with the ground-truth branch fed the history instead.
/// Exact, because both feature builders do just that without privileged data.
pub fn without_privilege<T: Real>(samples: &[TeacherSample<T>]) -> Vec<TeacherSample<T>> {
    samples
        .iter()
        .map(|s| TeacherSample {
            index: s.index,
            target: s.target.clone(),
            features: match &s.features {
                TeacherFeatures::Clm { l_hd, .. } => TeacherFeatures::Clm {
                    l_gt: l_hd.clone(),
                    l_hd: l_hd.clone(),
                },
                TeacherFeatures::Series { hd, .. } => TeacherFeatures::Series {
                    gt: hd.clone(),
                    hd: hd.clone(),
                },
            },
        })
        .collect()
}

/// Short name of the ablation a config describes.
pub fn variant_name(cfg: &RunConfig) -> String {
    let mut parts = Vec::new();
    if cfg.lambda_p == 0.0 {
        parts.push("no_pkd");
    }
    for (on, name) in [
        (cfg.wo_ca, "wo_ca"),
        (cfg.wo_sca, "wo_sca"),
        (cfg.wo_cd, "wo_cd"),
        (cfg.wo_fd, "wo_fd"),
        (cfg.wo_pi, "wo_pi"),
        (cfg.wo_clm, "wo_clm"),
    ] {
        if on {
            parts.push(name);
        }
    }
    if cfg.mode == TrainingMode::Joint {
        parts.push("joint");
    }
    if parts.is_empty() {
        "full".into()
    } else {
        parts.join("+")
    }
}

/// Applies a named benchmark variant to a copy of `base`.
pub fn apply_variant(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    match variant {
        "full" => {}
        "no_pkd" => c.lambda_p = 0.0,
        "wo_ca" => c.wo_ca = true,
        "wo_sca" => c.wo_sca = true,
        "wo_cd" => c.wo_cd = true,
        "wo_fd" => c.wo_fd = true,
        "wo_pi" => c.wo_pi = true,
        "wo_clm" => c.wo_clm = true,
        other => {
            return Err(Error::Config(format!(
                "unknown variant `{other}`, expected one of {}",
                VARIANTS.join(", ")
            )))
        }
    }
    Ok(c)
}

/// Test-set errors of `student` over every test window, one at a time.
pub fn evaluate_student<T: Real>(
    student: &Student<T>,
    data: &PreparedData,
    space: MetricsSpace,
) -> Result<(f64, f64, usize)> {
    let scale = match space {
        MetricsSpace::Normalized => Some(data.train_std.clone()),
        MetricsSpace::Raw => None,
    };
    let mut acc = ErrorAccumulator::new(scale);
    for w in &data.test {
        acc.add(&student.predict(&w.x_h)?, &w.x_g)?;
    }
    if acc.windows() != data.test.len() {
        return Err(contract("evaluation skipped test windows"));
    }
    Ok((acc.mse(), acc.mae(), acc.windows()))
}

/// Models and logs of one training run.
pub struct Experiment<T> {
    pub teacher: Option<Teacher<T>>,
    pub student: Student<T>,
    pub teacher_log: Option<TrainLog>,
    pub student_log: TrainLog,
    pub metrics: SeedMetrics,
}

/// Trains as configured on prepared teacher samples and evaluates the student.
/// The teacher is skipped when no loss term needs it.
pub fn run_experiment<T: Real>(cfg: &RunConfig, data: &PreparedData, inputs: &TeacherInputs<T>) -> Result<Experiment<T>> {
    let w = cfg.weights();
    let s_train = student_samples::<T>(&data.train);
    let s_val = student_samples::<T>(&data.val);
    let mut student = Student::new(cfg.student_config(data.dataset.n_vars()))?;
    let (teacher, teacher_log, student_log) = match cfg.mode {
        TrainingMode::Staged if !w.uses_teacher() => {
            let none: Vec<PrivilegedArtifact> = Vec::new();
            let log = train_student(&mut student, &s_train, &s_val, &none, &w, &cfg.student_settings())?;
            (None, None, log)
        }
        TrainingMode::Staged => {
            let mut teacher = Teacher::new(cfg.teacher_config())?;
            let t_log = train_teacher(&mut teacher, &inputs.train, &inputs.val, &cfg.teacher_settings())?;
            let arts = teacher_artifacts(&teacher, &inputs.train)?;
            let log = train_student(&mut student, &s_train, &s_val, &arts, &w, &cfg.student_settings())?;
            (Some(teacher), Some(t_log), log)
        }
        TrainingMode::Joint => {
            let mut teacher = Teacher::new(cfg.teacher_config())?;
            let log = train_joint(&mut teacher, &mut student, &inputs.train, &s_train, &s_val, &w, &cfg.student_settings())?;
            (Some(teacher), None, log)
        }
    };
    let (mse, mae, windows) = evaluate_student(&student, data, cfg.metrics_space)?;
    Ok(Experiment {
        teacher,
        student,
        teacher_log,
        student_log,
        metrics: SeedMetrics {
            seed: cfg.seed,
            mse,
            mae,
            windows,
        },
    })
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join(RESOLVED_CONFIG_FILE), &cfg.to_text())
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for (e, (t, v)) in log.train_loss.iter().zip(&log.val_loss).enumerate() {
        writeln!(s, "{},{t},{v}", e + 1).unwrap();
    }
    write_text(path, &s)
}

/// Runs `$f::<f32>` or `$f::<f64>` as the config asks.
macro_rules! dispatch {
    ($cfg:expr, $f:ident ( $($arg:expr),* )) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn ingest_run(cfg: &RunConfig) -> Result<String> {
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    write_resolved(cfg, &dir)?;
    Ok(ingest_summary(&data))
}

fn train_teacher_impl<T: Real>(cfg: &RunConfig) -> Result<String> {
    if cfg.mode == TrainingMode::Joint {
        return Err(Error::Config(
            "mode = joint trains teacher and student together; run `distill`".into(),
        ));
    }
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    write_resolved(cfg, &dir)?;
    let started = Instant::now();
    let (inputs, clm) = teacher_inputs::<T>(cfg, &data)?;
    let before = clm.as_ref().map(Clm::checksum);
    let mut teacher = Teacher::<T>::new(cfg.teacher_config())?;
    let log = train_teacher(&mut teacher, &inputs.train, &inputs.val, &cfg.teacher_settings())?;
    if clm.as_ref().map(Clm::checksum) != before {
        return Err(contract("language model parameters changed during teacher training"));
    }
    let arts = teacher_artifacts(&teacher, &inputs.train)?;
    teacher.save(&dir.join(TEACHER_FILE), &cfg.echo())?;
    if let Some(clm) = &clm {
        clm.export_weights(&dir.join(CLM_FILE))?;
    }
    cache_write(
        &dir.join(CACHE_FILE),
        data.dataset.n_vars(),
        cfg.model_width,
        cfg.horizon,
        cfg.teacher_hash(),
        cfg.cache_precision == Precision::F64,
        &arts,
    )?;
    write_train_log(&dir.join("teacher_log.csv"), &log)?;
    Ok(format!(
        "teacher epochs={} best_epoch={} best_val={:.6} cached={} secs={:.1}",
        log.train_loss.len(),
        log.best_epoch + 1,
        log.best_val().unwrap_or(f64::NAN),
        arts.len(),
        started.elapsed().as_secs_f64()
    ))
}

/// Trains the teacher and writes its checkpoint, the language-model weights
/// and the artifact cache.
pub fn train_teacher_run(cfg: &RunConfig) -> Result<String> {
    dispatch!(cfg, train_teacher_impl(cfg))
}

fn distill_impl<T: Real>(cfg: &RunConfig) -> Result<String> {
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    let w = cfg.weights();
    let started = Instant::now();
    let s_train = student_samples::<T>(&data.train);
    let s_val = student_samples::<T>(&data.val);
    let mut student = Student::<T>::new(cfg.student_config(data.dataset.n_vars()))?;
    let log = match cfg.mode {
        TrainingMode::Staged => {
            let cache;
            let none: Vec<PrivilegedArtifact> = Vec::new();
            let source: &dyn ArtifactSource = if w.uses_teacher() {
                cache = CacheReader::open(&dir.join(CACHE_FILE), cfg.teacher_hash())?;
                if cache.len() != data.train.len() {
                    return Err(Error::StaleCache {
                        expected: data.train.len() as u64,
                        found: cache.len() as u64,
                    });
                }
                &cache
            } else {
                &none
            };
            train_student(&mut student, &s_train, &s_val, source, &w, &cfg.student_settings())?
        }
        TrainingMode::Joint => {
            let (inputs, _clm) = teacher_inputs::<T>(cfg, &data)?;
            let mut teacher = Teacher::<T>::new(cfg.teacher_config())?;
            let log = train_joint(&mut teacher, &mut student, &inputs.train, &s_train, &s_val, &w, &cfg.student_settings())?;
            teacher.save(&dir.join(TEACHER_FILE), &cfg.echo())?;
            log
        }
    };
    write_resolved(cfg, &dir)?;
    student.save(&dir.join(STUDENT_FILE), &cfg.echo())?;
    write_train_log(&dir.join("student_log.csv"), &log)?;
    Ok(format!(
        "student epochs={} best_epoch={} best_val={:.6} secs={:.1}",
        log.train_loss.len(),
        log.best_epoch + 1,
        log.best_val().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    ))
}

/// Trains the student. Staged mode reads teacher outputs from the cache and
/// refuses a cache written under a different teacher configuration.
pub fn distill_run(cfg: &RunConfig) -> Result<String> {
    dispatch!(cfg, distill_impl(cfg))
}

/// Parameter counts of the three models, split into trainable and frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub student_trainable: usize,
    pub teacher_trainable: usize,
    /// Frozen language-model parameters, zero without one.
    pub clm_frozen: usize,
}

impl Footprint {
    /// Counts by building fresh models; nothing is encoded.
    pub fn of(cfg: &RunConfig, n_vars: usize) -> Result<Self> {
        let student = Student::<f32>::new(cfg.student_config(n_vars))?.numel();
        let teacher = Teacher::<f32>::new(cfg.teacher_config())?.numel();
        let clm = if cfg.wo_clm {
            0
        } else {
            Clm::<f32>::new(cfg.clm_config())?.numel()
        };
        Ok(Self {
            student_trainable: student,
            teacher_trainable: teacher,
            clm_frozen: clm,
        })
    }
}

fn evaluate_impl<T: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<String> {
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    let student = Student::<T>::load(checkpoint, cfg.student_config(data.dataset.n_vars()))?;
    let started = Instant::now();
    let (mse, mae, windows) = evaluate_student(&student, &data, cfg.metrics_space)?;
    let secs = started.elapsed().as_secs_f64();
    let report = MetricsReport {
        dataset: data.dataset.name.clone(),
        variant: variant_name(cfg),
        horizon: cfg.horizon,
        space: cfg.metrics_space.to_string(),
        seeds: vec![SeedMetrics {
            seed: cfg.seed,
            mse,
            mae,
            windows,
        }],
    };
    write_resolved(cfg, &dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), std::slice::from_ref(&report))?;
    write_text(&dir.join("metrics.txt"), &format!("{}\n", report.table()))?;
    let fp = Footprint::of(cfg, data.dataset.n_vars())?;
    let summary = format!(
        "test_windows = {windows}\n\
         inference_secs = {secs:.3}\n\
         secs_per_window = {:.6}\n\
         student_trainable_params = {}\n\
         teacher_trainable_params = {}\n\
         clm_frozen_params = {}\n",
        secs / windows as f64,
        fp.student_trainable,
        fp.teacher_trainable,
        fp.clm_frozen
    );
    write_text(&dir.join("summary.txt"), &summary)?;
    Ok(report.table())
}

/// Scores a student checkpoint on every test window. Needs no teacher,
/// language model or cache.
pub fn evaluate_run(cfg: &RunConfig, checkpoint: &Path) -> Result<String> {
    dispatch!(cfg, evaluate_impl(cfg, checkpoint))
}

fn forecast_impl<T: Real>(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<String> {
    let ds = load_csv(input, &cfg.dataset_name, &cfg.freq)?;
    let h = cfg.history_len;
    if ds.len() < h {
        return Err(Error::InsufficientData {
            needed: h,
            have: ds.len(),
        });
    }
    let student = Student::<T>::load(checkpoint, cfg.student_config(ds.n_vars()))?;
    let pred = student.predict(&ds.rows(ds.len() - h..ds.len()))?;
    report::write_forecast(output, &ds.columns, &pred)?;
    Ok(format!("forecast {}x{} -> {}", pred.rows(), pred.cols(), output.display()))
}

/// Forecasts the `horizon` steps after the last `history_len` rows of `input`.
pub fn forecast_run(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<String> {
    dispatch!(cfg, forecast_impl(cfg, checkpoint, input, output))
}

fn report_impl<T: Real>(cfg: &RunConfig) -> Result<String> {
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    let names = &data.dataset.columns;
    let k = cfg.report_window;
    let window = data.train.get(k).ok_or_else(|| {
        Error::Config(format!("report_window {k} beyond {} training windows", data.train.len()))
    })?;
    let cache = CacheReader::open(&dir.join(CACHE_FILE), cfg.teacher_hash())?;
    let art = cache.get(k)?;
    let student = Student::<T>::load(&dir.join(STUDENT_FILE), cfg.student_config(names.len()))?;
    let (t_h, a_tse) = student.representations(&window.x_h)?;
    report::write_heatmap(&dir.join("a_pe.csv"), names, &art.a_pe)?;
    report::write_heatmap(&dir.join("a_tse.csv"), names, &a_tse)?;
    report::write_heatmap(&dir.join("e_gt_relation.csv"), names, &report::self_relation(&art.e_gt)?)?;
    report::write_heatmap(&dir.join("t_h_relation.csv"), names, &report::self_relation(&t_h)?)?;
    let test = &data.test[0];
    let pred = student.predict(&test.x_h)?;
    for (j, name) in names.iter().enumerate() {
        let p: Vec<f64> = (0..pred.rows()).map(|t| pred.at(t, j)).collect();
        report::write_forecast_comparison(&dir.join(format!("forecast_{name}.csv")), &test.future_of(j), &p)?;
    }
    Ok(format!("report for training window {k} and test window 0 in {}", dir.display()))
}

/// Exports attention maps, feature relations and a forecast comparison.
pub fn report_run(cfg: &RunConfig) -> Result<String> {
    dispatch!(cfg, report_impl(cfg))
}

/// Teacher samples keyed by how they were built, so variants and seeds that
/// share a feature kind encode each window once.
struct FeatureBank<T> {
    entries: HashMap<(bool, bool, bool), TeacherInputs<T>>,
}

impl<T: Real> FeatureBank<T> {
    fn get(&mut self, cfg: &RunConfig, data: &PreparedData) -> Result<&TeacherInputs<T>> {
        let key = (cfg.wo_clm, cfg.wo_ca, cfg.wo_pi);
        if !self.entries.contains_key(&key) {
            let inputs = if cfg.wo_pi {
                let mut full = cfg.clone();
                full.wo_pi = false;
                let base = self.get(&full, data)?;
                TeacherInputs {
                    train: without_privilege(&base.train),
                    val: without_privilege(&base.val),
                }
            } else {
                teacher_inputs::<T>(cfg, data)?.0
            };
            self.entries.insert(key, inputs);
        }
        Ok(&self.entries[&key])
    }
}

fn benchmark_impl<T: Real>(
    cfg: &RunConfig,
    seeds: &[u64],
    variants: &[String],
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<MetricsReport>> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed and one variant".into()));
    }
    let configs = variants
        .iter()
        .map(|v| apply_variant(cfg, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let data = prepare_data(cfg)?;
    let dir = out_dir(cfg)?;
    write_resolved(cfg, &dir)?;
    let mut bank = FeatureBank::<T> {
        entries: HashMap::new(),
    };
    let empty = TeacherInputs {
        train: Vec::new(),
        val: Vec::new(),
    };
    let mut reports = Vec::new();
    for (name, vcfg) in &configs {
        let mut report = MetricsReport {
            dataset: data.dataset.name.clone(),
            variant: name.clone(),
            horizon: cfg.horizon,
            space: cfg.metrics_space.to_string(),
            seeds: Vec::new(),
        };
        for &seed in seeds {
            let mut c = vcfg.clone();
            c.seed = seed;
            let needs_teacher = c.mode == TrainingMode::Joint || c.weights().uses_teacher();
            let inputs = if needs_teacher { bank.get(&c, &data)? } else { &empty };
            let started = Instant::now();
            let exp = run_experiment(&c, &data, inputs)?;
            progress(&format!(
                "{name} seed={seed} mse={:.6} mae={:.6} secs={:.1}",
                exp.metrics.mse,
                exp.metrics.mae,
                started.elapsed().as_secs_f64()
            ));
            report.seeds.push(exp.metrics);
        }
        reports.push(report);
    }
    write_metrics_csv(&dir.join("benchmark.csv"), &reports)?;
    let table: String = reports.iter().map(|r| format!("{}\n", r.table())).collect();
    write_text(&dir.join("benchmark.txt"), &table)?;
    Ok(reports)
}

/// Trains and scores every variant for every seed on the same windows.
pub fn benchmark_run(
    cfg: &RunConfig,
    seeds: &[u64],
    variants: &[String],
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<MetricsReport>> {
    dispatch!(cfg, benchmark_impl(cfg, seeds, variants, progress))
}

/// Mean of `mse` over a report's seeds.
pub fn mean_mse(report: &MetricsReport) -> f64 {
    report.mse_mean_std().0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.synth_t = 200;
        c.history_len = 8;
        c.horizon = 4;
        c.train_stride = 4;
        c.eval_stride = 4;
        c.clm_layers = 1;
        c.clm_width = 8;
        c.clm_heads = 2;
        c.model_width = 8;
        c.encoder_layers = 1;
        c.encoder_heads = 2;
        c.teacher_epochs = 2;
        c.student_epochs = 2;
        c.precision = Precision::F64;
        c
    }

    #[test]
    fn windows_respect_strides_and_fraction() {
        let mut c = tiny();
        let data = prepare_data(&c).unwrap();
        assert_eq!(data.split_rows, [120, 40, 40]);
        assert_eq!(data.train.len(), window_count(120, 8, 4, 4));
        assert_eq!(data.test.len(), window_count(40, 8, 4, 4));
        c.train_fraction = 0.5;
        let half = prepare_data(&c).unwrap();
        assert_eq!(half.train.len(), window_count(60, 8, 4, 4));
        assert_eq!(half.test.len(), data.test.len());
    }

    #[test]
    fn variant_names() {
        let c = tiny();
        assert_eq!(variant_name(&c), "full");
        for v in VARIANTS {
            assert_eq!(variant_name(&apply_variant(&c, v).unwrap()), *v);
        }
        assert!(apply_variant(&c, "bogus").is_err());
    }

    #[test]
    fn removing_privilege_matches_direct_features() {
        let c = tiny();
        let data = prepare_data(&c).unwrap();
        let (full, _) = teacher_inputs::<f64>(&c, &data).unwrap();
        let mut hd_only = c.clone();
        hd_only.wo_pi = true;
        let (direct, _) = teacher_inputs::<f64>(&hd_only, &data).unwrap();
        for (a, b) in without_privilege(&full.train).iter().zip(&direct.train) {
            match (&a.features, &b.features) {
                (TeacherFeatures::Clm { l_gt: x, l_hd: y }, TeacherFeatures::Clm { l_gt: u, l_hd: v }) => {
                    assert_eq!((x, y), (u, v));
                }
                _ => panic!("expected language-model features"),
            }
        }
    }

    #[test]
    fn every_test_window_scored_once() {
        let c = tiny();
        let data = prepare_data(&c).unwrap();
        let (inputs, _) = teacher_inputs::<f64>(&c, &data).unwrap();
        let exp = run_experiment(&c, &data, &inputs).unwrap();
        assert_eq!(exp.metrics.windows, data.test.len());
        assert!(exp.metrics.mse.is_finite());
        assert!(exp.teacher.is_some());
    }
}
