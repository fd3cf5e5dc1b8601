//! Adam optimization and the per-ID training loop with early stopping.

use super::backward::backward;
use super::forward::{forward, mean_loss};
use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::preprocess::WindowBatch;
use crate::rng::sub_rng;
use crate::scalar::{c, Scalar};
use ndarray::Array1;
use rand::seq::SliceRandom;

/// Training hyperparameters. Defaults are the production configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Frames per window.
    pub window_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            max_epochs: 50,
            patience: 5,
            dropout_rate: 0.20,
            batch_size: 64,
            rng_seed: 0,
            window_len: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config(format!("learning rate {} out of (0,1)", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} out of [0,1)", self.dropout_rate)));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("epochs and patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.window_len == 0 {
            return Err(Error::Config("batch size and window length must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: Array1<T>,
    pub v: Array1<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: Array1::zeros(len),
            v: Array1::zeros(len),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place on a flat parameter vector.
pub fn adam_step<T: Scalar>(
    params: &mut Array1<T>,
    grads: &Array1<T>,
    state: &mut AdamState<T>,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {} grads {} state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let b1 = c::<T>(state.beta1);
    let b2 = c::<T>(state.beta2);
    let one = T::one();
    let corr1 = one - c::<T>(state.beta1.powi(state.t as i32));
    let corr2 = one - c::<T>(state.beta2.powi(state.t as i32));
    let lr = c::<T>(learning_rate);
    let eps = c::<T>(state.epsilon);
    for idx in 0..params.len() {
        let g = grads[idx];
        state.m[idx] = b1 * state.m[idx] + (one - b1) * g;
        state.v[idx] = b2 * state.v[idx] + (one - b2) * g * g;
        let m_hat = state.m[idx] / corr1;
        let v_hat = state.v[idx] / corr2;
        params[idx] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Patience-based stop rule on the validation loss, restorable to the best
/// epoch. Epochs are 1-based in reports.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_loss: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Record one epoch's validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

/// Per-epoch curves and the stopping outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Train one ID's autoencoder: seeded shuffling, minibatch Adam, per-epoch
/// validation, early stopping, best-weights restoration.
pub fn train<T: Scalar>(
    dims: ModelDims,
    train_batch: &WindowBatch<T>,
    val_batch: &WindowBatch<T>,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    config.validate()?;
    if train_batch.windows.is_empty() || val_batch.windows.is_empty() {
        return Err(Error::Config("training and validation batches must be non-empty".into()));
    }
    if train_batch.meta.iter().chain(&val_batch.meta).any(|m| m.tampered) {
        return Err(Error::Config("tampered windows in a training or validation batch".into()));
    }
    if train_batch.k != dims.k || val_batch.k != dims.k {
        return Err(Error::KMismatch { model_k: dims.k, window_k: train_batch.k });
    }
    let id = train_batch.can_id;
    let mut params =
        ModelParams::<T>::init(dims, &mut sub_rng(config.rng_seed, "model-init", id, 0));
    let mut flat = params.to_flat();
    let mut adam = AdamState::<T>::new(flat.len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_flat = flat.clone();
    let mut report = TrainReport {
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        epochs_run: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };

    let mut order: Vec<usize> = (0..train_batch.windows.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut shuffle_rng = sub_rng(config.rng_seed, "epoch-shuffle", id, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng = sub_rng(config.rng_seed, "dropout", id, epoch as u64);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let minibatch: Vec<ndarray::Array2<T>> =
                chunk.iter().map(|&w| train_batch.windows[w].clone()).collect();
            let (_, cache) =
                forward(&params, &minibatch, true, config.dropout_rate, &mut dropout_rng)?;
            let grads = backward(&params, &cache)?;
            epoch_loss += cache.batch_loss().to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
            seen += chunk.len();
            adam_step(&mut flat, &grads.to_flat(), &mut adam, config.learning_rate)?;
            params.set_from_flat(&flat)?;
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = mean_loss(&params, &val_batch.windows)?.to_f64().unwrap_or(f64::NAN);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::TrainingFailure(format!(
                "ID 0x{id:X}: non-finite loss at epoch {epoch} (train {train_loss}, val {val_loss})"
            )));
        }
        report.train_losses.push(train_loss);
        report.val_losses.push(val_loss);
        report.epochs_run = epoch;
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_flat = flat.clone();
        }
        if stop {
            break;
        }
    }
    report.best_epoch = stopper.best_epoch;
    report.best_val_loss = stopper.best_loss;
    params.set_from_flat(&best_flat)?;
    params.check_finite()?;
    Ok((params, report))
}
