//! Privileged knowledge distillation: the student forecasts from history only
//! while matching the teacher's attention map (correlation distillation) and
//! embeddings (feature distillation).
//!
//! Teacher signals always enter the student's graph as constants, so no
//! gradient ever reaches the teacher from these losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::CacheReader;
use crate::dataio::TimeSeriesWindow;
use crate::error::{contract, Error, Result};
use crate::nn::Dropout;
use crate::student::Student;
use crate::teacher::{normalized_target, PrivilegedArtifact, Teacher, TeacherSample};
use crate::tensor::{AdamW, Graph, ParamStore, Real, Tensor, Var};
use crate::training::{shuffled_batches, EarlyStop, TrainLog, TrainSettings, Verdict};

/// Weights of the overall objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Teacher reconstruction.
    pub lambda_r: f64,
    /// Privileged distillation as a whole.
    pub lambda_p: f64,
    /// Correlation distillation inside the distillation term.
    pub lambda_c: f64,
    /// Feature distillation inside the distillation term.
    pub lambda_e: f64,
    /// Forecasting.
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_p: 1.0,
            lambda_c: 1.0,
            lambda_e: 1.0,
            lambda_f: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_p, self.lambda_c, self.lambda_e, self.lambda_f];
        if all.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(contract(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        Ok(())
    }

    /// Whether any teacher signal enters the student objective.
    pub fn uses_teacher(&self) -> bool {
        self.lambda_p > 0.0 && (self.lambda_c > 0.0 || self.lambda_e > 0.0)
    }
}

/// Mean SmoothL1 between the teacher's and student's attention maps.
pub fn correlation_loss<T: Real>(g: &mut Graph<T>, a_pe: Var, a_tse: Var) -> Result<Var> {
    g.smooth_l1(a_tse, a_pe)
}

/// Mean SmoothL1 between teacher and student embeddings.
pub fn feature_loss<T: Real>(g: &mut Graph<T>, e_gt: Var, t_h: Var) -> Result<Var> {
    g.smooth_l1(t_h, e_gt)
}

/// `λ_c·L_cd + λ_e·L_fd`.
pub fn pkd_loss<T: Real>(g: &mut Graph<T>, cd: Var, fd: Var, lambda_c: f64, lambda_e: f64) -> Result<Var> {
    let a = g.scale(cd, T::lit(lambda_c));
    let b = g.scale(fd, T::lit(lambda_e));
    g.add(a, b)
}

/// `λ_r·L_recon + λ_p·L_pkd + λ_f·L_fcst`; a missing reconstruction term is
/// treated as a constant and left out.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    recon: Option<Var>,
    pkd: Var,
    fcst: Var,
    w: &LossWeights,
) -> Result<Var> {
    let p = g.scale(pkd, T::lit(w.lambda_p));
    let f = g.scale(fcst, T::lit(w.lambda_f));
    let mut total = g.add(p, f)?;
    if let Some(r) = recon {
        let r = g.scale(r, T::lit(w.lambda_r));
        total = g.add(r, total)?;
    }
    Ok(total)
}

/// A window prepared for the student.
#[derive(Debug, Clone)]
pub struct StudentSample<T> {
    pub index: usize,
    /// History normalized with its own statistics, `H×N`.
    pub x_norm: Tensor<T>,
    /// Future normalized with the history's statistics, `M×N`.
    pub target: Tensor<T>,
}

pub fn student_samples<T: Real>(windows: &[TimeSeriesWindow]) -> Vec<StudentSample<T>> {
    windows
        .iter()
        .map(|w| StudentSample {
            index: w.index,
            x_norm: w.stats.normalize(&w.x_h),
            target: normalized_target(w),
        })
        .collect()
}

/// Anything that yields the teacher's outputs for a training window.
pub trait ArtifactSource {
    fn artifact(&self, index: usize) -> Result<PrivilegedArtifact>;
}

impl ArtifactSource for CacheReader {
    fn artifact(&self, index: usize) -> Result<PrivilegedArtifact> {
        self.get(index)
    }
}

impl ArtifactSource for Vec<PrivilegedArtifact> {
    fn artifact(&self, index: usize) -> Result<PrivilegedArtifact> {
        self.get(index)
            .filter(|a| a.index == index)
            .cloned()
            .ok_or(Error::CacheMiss { index })
    }
}

/// Loss components of one student step, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub forecast: f64,
    pub correlation: f64,
    pub feature: f64,
    pub total: f64,
}

/// Forward and backward for one sample; the objective's gradient, scaled by
/// `weight`, is added to the student's accumulators. Terms with zero weight
/// are not built at all.
pub fn student_accumulate<T: Real>(
    student: &mut Student<T>,
    sample: &StudentSample<T>,
    teacher: Option<(&Tensor<T>, &Tensor<T>)>,
    w: &LossWeights,
    weight: f64,
    dropout: &mut Dropout<'_>,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let p = student.params().bind(&mut g);
    let x = g.constant(sample.x_norm.clone());
    let f = student.forward(&mut g, &p, x, dropout)?;
    let target = g.constant(sample.target.clone());
    let fcst = g.smooth_l1(f.forecast, target)?;
    let mut losses = StepLosses {
        forecast: g.value(fcst).item().as_f64(),
        ..Default::default()
    };
    let mut total = g.scale(fcst, T::lit(w.lambda_f));
    if w.uses_teacher() {
        let (e_gt, a_pe) = teacher.ok_or_else(|| contract("distillation needs teacher signals"))?;
        let mut pkd = None;
        if w.lambda_c > 0.0 {
            let a = g.constant(a_pe.clone());
            let cd = correlation_loss(&mut g, a, f.a_tse)?;
            losses.correlation = g.value(cd).item().as_f64();
            pkd = Some(g.scale(cd, T::lit(w.lambda_c)));
        }
        if w.lambda_e > 0.0 {
            let e = g.constant(e_gt.clone());
            let fd = feature_loss(&mut g, e, f.t_h)?;
            losses.feature = g.value(fd).item().as_f64();
            let fd = g.scale(fd, T::lit(w.lambda_e));
            pkd = Some(match pkd {
                Some(cd) => g.add(cd, fd)?,
                None => fd,
            });
        }
        if let Some(pkd) = pkd {
            let pkd = g.scale(pkd, T::lit(w.lambda_p));
            total = g.add(pkd, total)?;
        }
    }
    losses.total = g.value(total).item().as_f64();
    if !losses.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "student loss {} on window {}",
            losses.total, sample.index
        )));
    }
    let scaled = g.scale(total, T::lit(weight));
    let grads = g.backward(scaled)?;
    student.params_mut().accumulate(&p, &grads);
    Ok(losses)
}

/// Forecast loss in normalized space with dropout off.
pub fn student_eval_loss<T: Real>(student: &Student<T>, sample: &StudentSample<T>) -> Result<f64> {
    let mut g = Graph::new();
    let p = student.params().bind(&mut g);
    let x = g.constant(sample.x_norm.clone());
    let f = student.forward(&mut g, &p, x, &mut Dropout::off())?;
    let target = g.constant(sample.target.clone());
    let l = g.smooth_l1(f.forecast, target)?;
    Ok(g.value(l).item().as_f64())
}

fn mean_eval<T: Real>(student: &Student<T>, samples: &[StudentSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += student_eval_loss(student, s)?;
    }
    Ok(total / samples.len() as f64)
}

fn finish<T: Real>(store: &mut ParamStore<T>, best: &ParamStore<T>) -> Result<()> {
    store.copy_values_from(best)?;
    store.zero_grad();
    Ok(())
}

/// Trains the student against stored teacher outputs, stopping early on the
/// validation forecast loss and keeping the best epoch's parameters.
pub fn train_student<T: Real>(
    student: &mut Student<T>,
    train: &[StudentSample<T>],
    val: &[StudentSample<T>],
    teacher: &dyn ArtifactSource,
    w: &LossWeights,
    settings: &TrainSettings,
) -> Result<TrainLog> {
    w.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let val = if val.is_empty() { train } else { val };
    let mut order_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5717_de17);
    let mut opt = AdamW::new(settings.adam);
    let mut stop = EarlyStop::new(settings.patience);
    let mut best = student.params().clone();
    let mut log = TrainLog::default();
    student.params_mut().zero_grad();
    for epoch in 0..settings.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(train.len(), settings.batch_size, &mut order_rng) {
            let weight = 1.0 / batch.len() as f64;
            for &i in &batch {
                let sample = &train[i];
                let signals = if w.uses_teacher() {
                    let a = teacher.artifact(sample.index)?;
                    Some((a.e_gt.cast::<T>(), a.a_pe.cast::<T>()))
                } else {
                    None
                };
                let mut dropout = Dropout::train(settings.dropout, &mut drop_rng);
                let l = student_accumulate(
                    student,
                    sample,
                    signals.as_ref().map(|(e, a)| (e, a)),
                    w,
                    weight,
                    &mut dropout,
                )?;
                epoch_loss += l.total;
            }
            opt.step(student.params_mut())?;
            log.steps += 1;
        }
        log.train_loss.push(epoch_loss / train.len() as f64);
        let v = mean_eval(student, val)?;
        log.val_loss.push(v);
        match stop.observe(epoch, v) {
            Verdict::Improved => best = student.params().clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stop.best_epoch();
    finish(student.params_mut(), &best)?;
    Ok(log)
}

/// Teacher and student trained in one loop on the full objective. The
/// teacher learns only from its reconstruction term; its outputs reach the
/// student as constants. Early stopping follows the student's validation
/// forecast loss and restores both models to the best epoch.
pub fn train_joint<T: Real>(
    teacher: &mut Teacher<T>,
    student: &mut Student<T>,
    teacher_train: &[TeacherSample<T>],
    train: &[StudentSample<T>],
    val: &[StudentSample<T>],
    w: &LossWeights,
    settings: &TrainSettings,
) -> Result<TrainLog> {
    w.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if teacher_train.len() != train.len()
        || teacher_train.iter().zip(train).any(|(a, b)| a.index != b.index)
    {
        return Err(contract("teacher and student samples must cover the same windows"));
    }
    let val = if val.is_empty() { train } else { val };
    let mut order_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x5717_de17);
    let mut teacher_opt = AdamW::new(settings.adam);
    let mut student_opt = AdamW::new(settings.adam);
    let mut stop = EarlyStop::new(settings.patience);
    let mut best = (teacher.params().clone(), student.params().clone());
    let mut log = TrainLog::default();
    teacher.params_mut().zero_grad();
    student.params_mut().zero_grad();
    for epoch in 0..settings.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(train.len(), settings.batch_size, &mut order_rng) {
            let weight = 1.0 / batch.len() as f64;
            for &i in &batch {
                let mut dropout = Dropout::train(settings.dropout, &mut drop_rng);
                let (recon, e_gt, a_pe) =
                    teacher.accumulate(&teacher_train[i], w.lambda_r * weight, &mut dropout)?;
                let mut dropout = Dropout::train(settings.dropout, &mut drop_rng);
                let l = student_accumulate(student, &train[i], Some((&e_gt, &a_pe)), w, weight, &mut dropout)?;
                epoch_loss += w.lambda_r * recon + l.total;
            }
            teacher_opt.step(teacher.params_mut())?;
            student_opt.step(student.params_mut())?;
            log.steps += 1;
        }
        log.train_loss.push(epoch_loss / train.len() as f64);
        let v = mean_eval(student, val)?;
        log.val_loss.push(v);
        match stop.observe(epoch, v) {
            Verdict::Improved => best = (teacher.params().clone(), student.params().clone()),
            Verdict::Continue => {}
            Verdict::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stop.best_epoch();
    finish(teacher.params_mut(), &best.0)?;
    finish(student.params_mut(), &best.1)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn correlation_example() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::full([2, 2], 0.5));
        let l = correlation_loss(&mut g, a, b).unwrap();
        assert_eq!(scalar(&g, l), 0.125);
        let z = correlation_loss(&mut g, a, a).unwrap();
        assert_eq!(scalar(&g, z), 0.0);
    }

    #[test]
    fn feature_example_and_symmetry() {
        let mut g = Graph::new();
        let e = g.constant(Tensor::from_f64([1, 1], &[1.0]).unwrap());
        let t = g.constant(Tensor::from_f64([1, 1], &[0.0]).unwrap());
        let l1 = feature_loss(&mut g, e, t).unwrap();
        let l2 = feature_loss(&mut g, t, e).unwrap();
        assert_eq!(scalar(&g, l1), 0.5);
        assert_eq!(scalar(&g, l2), 0.5);
    }

    #[test]
    fn weighted_sums() {
        let mut g = Graph::<f64>::new();
        let cd = g.constant(Tensor::scalar(0.2));
        let fd = g.constant(Tensor::scalar(0.3));
        let pkd = pkd_loss(&mut g, cd, fd, 1.0, 1.0).unwrap();
        assert!((scalar(&g, pkd) - 0.5).abs() < 1e-15);
        let only_fd = pkd_loss(&mut g, cd, fd, 0.0, 1.0).unwrap();
        assert_eq!(scalar(&g, only_fd), 0.3);
        let r = g.constant(Tensor::scalar(0.1));
        let p = g.constant(Tensor::scalar(0.2));
        let f = g.constant(Tensor::scalar(0.3));
        let t = total_loss(&mut g, Some(r), p, f, &LossWeights::default()).unwrap();
        assert!((scalar(&g, t) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            lambda_c: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn vec_source_reports_miss() {
        let arts: Vec<PrivilegedArtifact> = Vec::new();
        assert!(matches!(arts.artifact(0), Err(Error::CacheMiss { index: 0 })));
    }
}
