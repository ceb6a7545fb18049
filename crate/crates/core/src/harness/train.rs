//! Mini-batch training with early stopping on validation accuracy.
//!
//! The example order of epoch `e` depends only on `(shuffle_seed, e)`, so a
//! run can resume from any epoch boundary without carrying generator state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::models::Model;
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::params::ParameterVector;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl From<&ExperimentConfig> for TrainSettings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            optimizer: c.optimizer,
            batch_size: c.batch_size,
            patience: c.patience,
            max_epochs: c.max_epochs,
        }
    }
}

/// Example order for epoch `epoch` (0-based).
pub fn epoch_order(len: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng::derive_seed(shuffle_seed, &[epoch as u64])));
    order
}

/// The `index`-th mini-batch of the epoch-0 order.
pub fn metric_batch(train: &Dataset, batch_size: usize, shuffle_seed: u64, index: usize) -> Result<Dataset> {
    let order = epoch_order(train.len(), shuffle_seed, 0);
    let rows = order
        .chunks(batch_size)
        .nth(index)
        .ok_or_else(|| Error::invalid(format!("metric batch {index} does not exist")))?;
    train.select(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub batch_losses: Vec<f64>,
    pub val_acc: f64,
}

impl EpochStats {
    /// Sum of this epoch's training losses.
    pub fn loss_sum(&self) -> f64 {
        self.batch_losses.iter().sum()
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub params: ParameterVector<f32>,
    pub optimizer: OptimizerState<f32>,
    pub shuffle_seed: u64,
    pub history: Vec<EpochStats>,
}

impl TrainState {
    pub fn new(model: Model, params: ParameterVector<f32>, optimizer: OptimizerConfig, shuffle_seed: u64) -> Self {
        let len = params.len();
        Self {
            model,
            params,
            optimizer: OptimizerState::new(optimizer, len),
            shuffle_seed,
            history: Vec::new(),
        }
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    /// One pass over `train`, then validation accuracy on `val`.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset, batch_size: usize) -> Result<&EpochStats> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let epoch = self.epoch() + 1;
        let order = epoch_order(train.len(), self.shuffle_seed, epoch - 1);
        let mut losses = Vec::with_capacity(order.len().div_ceil(batch_size));
        for (b, rows) in order.chunks(batch_size).enumerate() {
            let batch = train.select(rows)?;
            let (loss, grads) = self.model.loss_and_grad(&self.params, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            self.optimizer
                .apply(&mut self.params, &grads)
                .map_err(|_| Error::Diverged { epoch, batch: b })?;
            losses.push(f64::from(loss));
        }
        let val_acc = self.model.accuracy(&self.params, val)?;
        self.history.push(EpochStats {
            epoch,
            batch_losses: losses,
            val_acc,
        });
        Ok(self.history.last().unwrap())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, acc: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if acc <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, acc));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the end of the best-validation epoch.
    pub best: TrainState,
    pub best_acc: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Trains until validation accuracy stalls for `patience` epochs (or
/// `max_epochs`) and returns the best-validation parameters.
pub fn train_to_early_stop(
    model: &Model,
    init: ParameterVector<f32>,
    train: &Dataset,
    val: &Dataset,
    settings: &TrainSettings,
    shuffle_seed: u64,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(model.clone(), init, settings.optimizer, shuffle_seed);
    let mut stopper = EarlyStopper::new(settings.patience);
    let mut best_state = state.clone();
    let mut best = (0, model.accuracy(&state.params, val)?);
    while state.epoch() < settings.max_epochs {
        let (epoch, acc) = {
            let s = state.run_epoch(train, val, settings.batch_size)?;
            (s.epoch, s.val_acc)
        };
        match stopper.observe(epoch, acc) {
            StopDecision::Improved => {
                best = (epoch, acc);
                best_state = state.clone();
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainOutcome {
        best: best_state,
        best_acc: best.1,
        best_epoch: best.0,
        stopped_epoch: state.epoch(),
        history: state.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_counts_consecutive_stale_epochs() {
        let mut s = EarlyStopper::new(3);
        assert_eq!(s.observe(1, 0.9), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.8), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.7), StopDecision::Continue);
        assert_eq!(s.observe(4, 0.6), StopDecision::Stop);
        assert_eq!(s.best(), Some((1, 0.9)));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopper::new(2);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.6), StopDecision::Improved);
    }

    #[test]
    fn epoch_orders_are_permutations_keyed_by_epoch() {
        let a = epoch_order(50, 3, 0);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 3, 0));
        assert_ne!(a, epoch_order(50, 3, 1));
    }
}
