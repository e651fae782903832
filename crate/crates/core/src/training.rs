//! Pieces shared by the teacher and student training loops.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::tensor::AdamWConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub dropout: f64,
    pub seed: u64,
    pub adam: AdamWConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            patience: 5,
            dropout: 0.1,
            seed: 0,
            adam: AdamWConfig::default(),
        }
    }
}

/// Per-epoch losses of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub steps: usize,
    /// Epoch whose parameters were kept (0-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best_val(&self) -> Option<f64> {
        self.val_loss.get(self.best_epoch).copied()
    }
}

/// Tracks the best validation loss and when to give up.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad = 0;
            Verdict::Improved
        } else {
            self.bad += 1;
            if self.patience > 0 && self.bad >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// A shuffled partition of `0..n` into batches of at most `size`.
pub fn shuffled_batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = shuffled_batches(10, 3, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn patience_counts_non_improving_epochs() {
        let mut es = EarlyStop::new(2);
        assert!(matches!(es.observe(0, 1.0), Verdict::Improved));
        assert!(matches!(es.observe(1, 1.0), Verdict::Continue));
        assert!(matches!(es.observe(2, 0.5), Verdict::Improved));
        assert!(matches!(es.observe(3, 0.7), Verdict::Continue));
        assert!(matches!(es.observe(4, 0.6), Verdict::Stop));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn zero_patience_never_stops() {
        let mut es = EarlyStop::new(0);
        es.observe(0, 1.0);
        for e in 1..100 {
            assert!(!matches!(es.observe(e, 2.0), Verdict::Stop));
        }
    }
}
