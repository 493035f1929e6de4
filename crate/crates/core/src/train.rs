//! Masked SGD with momentum, weight decay and step learning-rate decay.
//!
//! Pruned positions receive neither gradient nor decay, so their momentum
//! buffer stays at zero and their values never move.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::{accuracy, loss_and_gradient, Head, LayeredParams};
use crate::rng::{self, RngState, Stream};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_drop_factor: f64,
    /// Fractions of `epochs` at which the rate is multiplied by the factor.
    pub lr_drop_points: Vec<f64>,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 64,
            initial_lr: 0.1,
            lr_drop_factor: 0.1,
            lr_drop_points: vec![0.5, 0.75],
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        let positive = [self.initial_lr, self.lr_drop_factor];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "learning rate and drop factor must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!(
                "weight decay {} must be >= 0 and momentum {} in [0, 1)",
                self.weight_decay, self.momentum
            )));
        }
        let pts = &self.lr_drop_points;
        if pts.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || pts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "drop points {pts:?} must be strictly increasing within (0, 1)"
            )));
        }
        Ok(())
    }

    /// `initial_lr · factor^k` with `k` the number of drop points passed by
    /// `epoch` (a point `f` is passed once `epoch ≥ f · epochs`).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_drop_points
            .iter()
            .filter(|&&f| epoch as f64 >= f * self.epochs as f64)
            .count();
        let mut lr = self.initial_lr;
        for _ in 0..passed {
            lr *= self.lr_drop_factor;
        }
        lr
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Weights and shuffle-generator position at the start of an epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub epoch: usize,
    pub weights: LayeredParams,
    pub rng_state: RngState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Accuracy (percent) on the evaluation set after the epoch.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: LayeredParams,
    pub history: Vec<EpochStats>,
    pub checkpoints: Vec<Checkpoint>,
    pub initial_accuracy: Option<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, epoch: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.epoch == epoch)
            .ok_or(Error::MissingCheckpoint { epoch })
    }

    /// Best evaluation accuracy over all epochs, falling back to the
    /// accuracy before training when no epoch ran.
    pub fn best_accuracy(&self) -> Option<f64> {
        self.history
            .iter()
            .filter_map(|s| s.accuracy)
            .fold(None, |best: Option<f64>, a| {
                Some(best.map_or(a, |b| b.max(a)))
            })
            .or(self.initial_accuracy)
    }
}

/// Train from scratch on the configured schedule.
pub fn train(
    params: &LayeredParams,
    mask: &Mask,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    checkpoint_epochs: &[usize],
) -> Result<TrainOutcome> {
    train_from(params, mask, data, eval, cfg, checkpoint_epochs, 0)
}

/// Train with the learning rate of retraining epoch `t` taken from epoch
/// `min(schedule_offset + t, epochs)` of the schedule.
pub fn train_from(
    params: &LayeredParams,
    mask: &Mask,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    checkpoint_epochs: &[usize],
    schedule_offset: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mask.check_aligned(&params.layer_sizes())?;
    if data.is_empty() {
        return Err(Error::Domain("training on an empty dataset".into()));
    }
    if let Some(&bad) = checkpoint_epochs.iter().find(|&&e| e > cfg.epochs) {
        return Err(Error::Domain(format!(
            "checkpoint epoch {bad} beyond {} epochs",
            cfg.epochs
        )));
    }

    let factors: Vec<Vec<f64>> = (0..mask.layer_count()).map(|l| mask.factors(l)).collect();
    let mut current = params.clone();
    let mut velocity: Vec<Vec<f64>> = params.layers().iter().map(|w| vec![0.0; w.len()]).collect();
    let mut shuffler = rng::stream(cfg.seed, Stream::Train);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let initial_accuracy = eval.map(|e| accuracy(&current, mask, e)).transpose()?;

    for epoch in 0..cfg.epochs {
        if checkpoint_epochs.contains(&epoch) {
            checkpoints.push(Checkpoint {
                epoch,
                weights: current.clone(),
                rng_state: RngState::capture(&shuffler),
            });
        }
        let lr = cfg.lr_at((schedule_offset + epoch).min(cfg.epochs));
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk)?;
            let (loss, grad) =
                match loss_and_gradient(&current, mask, &batch, Head::SoftmaxCrossEntropy) {
                    Ok(v) => v,
                    Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                    Err(e) => return Err(e),
                };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss;
            batches += 1;
            for (l, w) in current.layers_mut().iter_mut().enumerate() {
                let (g, v, c) = (&grad[l], &mut velocity[l], &factors[l]);
                for i in 0..w.len() {
                    if c[i] == 0.0 {
                        continue;
                    }
                    let step = g[i] + cfg.weight_decay * w[i];
                    v[i] = cfg.momentum * v[i] + step;
                    w[i] -= lr * v[i];
                }
            }
            if current.layers().iter().flatten().any(|w| !w.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
        }
        let accuracy = eval.map(|e| accuracy(&current, mask, e)).transpose()?;
        history.push(EpochStats {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            accuracy,
        });
    }
    if checkpoint_epochs.contains(&cfg.epochs) {
        checkpoints.push(Checkpoint {
            epoch: cfg.epochs,
            weights: current.clone(),
            rng_state: RngState::capture(&shuffler),
        });
    }
    Ok(TrainOutcome {
        params: current,
        history,
        checkpoints,
        initial_accuracy,
    })
}
