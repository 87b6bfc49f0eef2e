//! Mini-batch training with an L2 loss.

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::CnnModel;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { lr: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch_size: 16, epochs: 20, seed: 0 }
    }
}

impl TrainHyper {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Mean squared error over every element and its gradient.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} and target {:?} differ", pred.shape(), target.shape())));
    }
    let n = pred.data().len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Fit `model` to `(inputs, targets)` for `hyper.epochs` epochs.
///
/// Each epoch shuffles the items with a stream derived from `hyper.seed` and
/// takes `ceil(N / batch_size)` Adam steps. Batch norm needs two items per
/// batch, so a batch holding a single item is fed as that item twice; this
/// leaves the batch statistics and the loss identical to the single item.
pub fn train(model: &mut CnnModel, inputs: &Tensor, targets: &Tensor, hyper: &TrainHyper) -> Result<TrainReport> {
    let adam = hyper.adam();
    adam.validate()?;
    let n = inputs.batch();
    if n == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    if targets.batch() != n {
        return Err(Error::Training(format!("{n} inputs but {} targets", targets.batch())));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Training("batch size must be at least 1".into()));
    }

    let mut states: Vec<AdamState> = model.param_groups_mut().iter().map(|p| AdamState::new(p.len())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0u64;
    for epoch in 0..hyper.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(hyper.seed, Domain::Shuffle, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let items: Vec<usize> = if chunk.len() == 1 { vec![chunk[0], chunk[0]] } else { chunk.to_vec() };
            let x = inputs.gather(&items);
            let y = targets.gather(&items);
            let (pred, cache) = model.forward_train(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged at step {}", step + 1)));
            }
            let grads = model.backward(&cache, &grad)?;
            step += 1;
            for ((p, g), st) in model.param_groups_mut().into_iter().zip(grads.groups()).zip(&mut states) {
                adam_step(p, g, st, &adam, step)?;
            }
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(TrainReport { epoch_losses, steps: step })
}
