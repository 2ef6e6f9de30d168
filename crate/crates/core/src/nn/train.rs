//! Mini-batch training with best-validation checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::adam::Adam;
use super::loss::{Objective, Sample};
use super::mlp::{Gradients, Mlp, Trace};
use super::spec::NetSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`,
    /// reached by cosine annealing. 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.2,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::InvalidConfig("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || self.epochs == 1 {
            return self.learning_rate;
        }
        let progress = (epoch - 1) as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters with the lowest validation loss seen, including the
    /// initialization.
    pub params: Mlp<T>,
    /// Mean per-sample training loss of each epoch.
    pub train_losses: Vec<T>,
    /// Mean per-sample validation loss after each epoch.
    pub val_losses: Vec<T>,
    /// 0 when the initialization was never improved upon.
    pub best_epoch: usize,
    pub best_val_loss: T,
    pub n_train: usize,
    pub n_val: usize,
}

fn mean_loss<T: Scalar, O: Objective<T>>(
    net: &Mlp<T>,
    objective: &O,
    data: &[Sample<T>],
    idx: &[usize],
    trace: &mut Trace<T>,
) -> T {
    let mut sum = T::zero();
    for &i in idx {
        net.forward_trace(&data[i].input, trace);
        sum += objective.loss(trace.output(), &data[i]);
    }
    sum / T::from_usize(idx.len()).unwrap()
}

/// Trains a fresh network initialized from `cfg.seed`.
///
/// Samples whose objective weight is zero contribute nothing to the
/// objective and are excluded before the train/validation split. Each
/// mini-batch loss is the mean of the per-sample losses in the batch.
pub fn train<T: Scalar, O: Objective<T>>(
    spec: &NetSpec,
    data: &[Sample<T>],
    cfg: &TrainConfig,
    objective: &O,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    for s in data {
        if s.input.len() != spec.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "training input",
                expected: spec.input_dim(),
                got: s.input.len(),
            });
        }
        if s.target.len() != spec.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "training target",
                expected: spec.output_dim(),
                got: s.target.len(),
            });
        }
        let w = objective.weight(s);
        if !(w >= T::zero()) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!("sample weight must be finite and >= 0, got {w}")));
        }
    }

    let mut net = Mlp::init(spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut active: Vec<usize> = (0..data.len())
        .filter(|&i| objective.weight(&data[i]) > T::zero())
        .collect();

    if active.is_empty() {
        // objective is identically zero: nothing to learn
        let zeros = vec![T::zero(); cfg.epochs];
        return Ok(TrainOutcome {
            params: net,
            train_losses: zeros.clone(),
            val_losses: zeros,
            best_epoch: 0,
            best_val_loss: T::zero(),
            n_train: 0,
            n_val: 0,
        });
    }

    active.shuffle(&mut rng);
    let n = active.len();
    let (mut train_idx, val_idx) = if n == 1 {
        (active.clone(), active)
    } else {
        let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
        let val = active.split_off(n - n_val);
        (active, val)
    };

    let mut trace = Trace::new(spec);
    let mut grads = Gradients::zeros_like(spec);
    let mut adam = Adam::new(
        net.layers(),
        T::of(cfg.learning_rate),
        T::of(cfg.beta1),
        T::of(cfg.beta2),
        T::of(cfg.epsilon),
    );

    let mut best_val = mean_loss(&net, objective, data, &val_idx, &mut trace);
    let mut best_params = net.clone();
    let mut best_epoch = 0;
    let mut train_losses = Vec::with_capacity(cfg.epochs);
    let mut val_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        adam.set_learning_rate(T::of(cfg.learning_rate_at(epoch)));
        train_idx.shuffle(&mut rng);
        let mut epoch_sum = T::zero();
        for (b, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            grads.fill_zero();
            let mut batch_sum = T::zero();
            for &i in batch {
                batch_sum += net.accumulate(objective, &data[i], &mut trace, &mut grads);
            }
            if !batch_sum.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    during: format!("batch {b}"),
                    loss: batch_sum.to_f64_lossy(),
                });
            }
            grads.scale(T::one() / T::from_usize(batch.len()).unwrap());
            adam.step(net.layers_mut(), &grads);
            epoch_sum += batch_sum;
        }
        train_losses.push(epoch_sum / T::from_usize(train_idx.len()).unwrap());

        let val = mean_loss(&net, objective, data, &val_idx, &mut trace);
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                during: "validation".into(),
                loss: val.to_f64_lossy(),
            });
        }
        val_losses.push(val);
        if val < best_val {
            best_val = val;
            best_params = net.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        train_losses,
        val_losses,
        best_epoch,
        best_val_loss: best_val,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    })
}
