//! Shared training machinery: batching, epoch shuffling, early stopping.
//!
//! Per-sample gradients are computed on independent tapes (optionally in
//! parallel) and reduced in sample order, so a training run is bit-identical
//! regardless of thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::axpy;
use crate::autodiff::{AdamConfig, AdamState, ParamSet, Tensor};
use crate::util::{derive_seed, rng_stream};
use crate::{Error, Result};

/// User-facing model hyperparameters shared by both attention models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Feed-forward width; defaults to `4 * d_model`.
    #[serde(default)]
    pub d_ff: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_heads() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}
fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    5
}

impl ModelConfig {
    pub fn new(layers: usize, d_model: usize, learning_rate: f64, batch_size: usize) -> Self {
        Self {
            layers,
            d_model,
            heads: default_heads(),
            d_ff: None,
            dropout: default_dropout(),
            learning_rate,
            batch_size,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }

    pub fn encoder_config(&self, max_len: usize) -> crate::attention::EncoderConfig {
        let mut cfg = crate::attention::EncoderConfig::new(self.layers, self.d_model, max_len);
        cfg.heads = self.heads;
        cfg.d_ff = self.d_ff.unwrap_or(4 * self.d_model);
        cfg.dropout = self.dropout;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch size and epoch cap must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Loss / accuracy trace of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Epoch (0-based) with the lowest validation loss; its parameters are
    /// the ones retained.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// One model's view of its training data: per-sample losses and gradients.
pub(crate) trait TrainTask: Sync {
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Loss and parameter gradients for one training sample, with dropout
    /// driven by `dropout_seed`.
    fn grad_sample(
        &self,
        params: &ParamSet,
        sample: usize,
        dropout_seed: u64,
    ) -> Result<(f64, Vec<Tensor>)>;
    /// `(loss, correct, total)` for one validation sample in eval mode.
    fn eval_sample(&self, params: &ParamSet, sample: usize) -> Result<(f64, usize, usize)>;
}

const TAG_EPOCH: u64 = 0x45504f43; // "EPOC"
const TAG_DROP: u64 = 0x44524f50; // "DROP"

pub(crate) fn run_training(
    task: &impl TrainTask,
    params: &mut ParamSet,
    config: &ModelConfig,
    seed: u64,
) -> Result<TrainReport> {
    config.validate()?;
    let n_train = task.train_len();
    let n_val = task.val_len();
    if n_train == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut adam = AdamState::new(
        AdamConfig::with_lr(config.learning_rate),
        &params.shapes(),
    );
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng_stream(seed, &[TAG_EPOCH, epoch as u64]));

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            // independent per-sample tapes; reduction is in batch order
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| {
                    task.grad_sample(
                        params,
                        i,
                        derive_seed(seed, &[TAG_DROP, epoch as u64, i as u64]),
                    )
                })
                .collect();
            let mut acc: Vec<Tensor> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for res in results {
                let (loss, grads) = res?;
                loss_sum += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    axpy(1.0, g.data(), a.data_mut());
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for a in &mut acc {
                for v in a.data_mut() {
                    *v *= inv;
                }
            }
            adam.step(params.tensors_mut(), &acc)?;
        }
        let train_loss = loss_sum / n_train as f64;
        if !train_loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "training loss became non-finite in epoch {epoch}"
            )));
        }
        report.train_loss.push(train_loss);

        let (val_loss, val_accuracy) = if n_val == 0 {
            (train_loss, f64::NAN)
        } else {
            let evals: Vec<Result<(f64, usize, usize)>> = (0..n_val)
                .into_par_iter()
                .map(|i| task.eval_sample(params, i))
                .collect();
            let mut loss = 0.0;
            let mut correct = 0usize;
            let mut total = 0usize;
            for e in evals {
                let (l, c, t) = e?;
                loss += l;
                correct += c;
                total += t;
            }
            (loss / n_val as f64, correct as f64 / total.max(1) as f64)
        };
        if !val_loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "validation loss became non-finite in epoch {epoch}"
            )));
        }
        report.val_loss.push(val_loss);
        report.val_accuracy.push(val_accuracy);

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            report.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    *params = best_params;
    Ok(report)
}
