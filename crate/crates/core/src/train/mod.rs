//! Weighted cross-entropy training with early stopping.

pub mod gradcheck;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{class_weights, oversample_minority, FeatureWindow, SplitBundle};
use crate::metrics::{confusion_counts, metrics_report, MetricsReport, DEFAULT_THRESHOLD};
use crate::rnn::{init_params, model_backward, model_forward, pack_batch, Mode, ModelConfig, ModelParams};

pub use gradcheck::{gradient_check, relative_error, FD_STEP};
pub use optim::{optimizer_step, Optimizer, OptimizerState};

/// Clamp applied to probabilities inside the loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeighting {
    /// `(w0, w1)`
    Fixed(f64, f64),
    /// Inverse class frequency of the (possibly oversampled) training set.
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub class_weights: ClassWeighting,
    pub use_oversampling: bool,
    /// Also oversample the validation split.
    pub oversample_validation: bool,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            class_weights: ClassWeighting::Fixed(1.0, 1.0),
            use_oversampling: true,
            oversample_validation: false,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if let ClassWeighting::Fixed(a, b) = self.class_weights {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("class weights ({a}, {b})")));
            }
        }
        self.optimizer.validate()
    }
}

/// `−w_y · [y·ln p + (1−y)·ln(1−p)]`
pub fn weighted_bce(p: f64, y: u8, weights: (f64, f64)) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(p));
    }
    let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    Ok(if y == 1 { -weights.1 * p.ln() } else { -weights.0 * (1.0 - p).ln() })
}

/// Mean loss over a batch and its gradient with respect to each probability.
pub fn batch_loss(probs: &[f64], labels: &[u8], weights: (f64, f64)) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        total += weighted_bce(p, y, weights)?;
        let q = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        let g = if y == 1 { -weights.1 / q } else { weights.0 / (1.0 - q) };
        grad.push(g / n);
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: (f64, f64),
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_acc,val_f1";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ =
                writeln!(s, "{},{:.8},{:.8},{:.6},{:.6}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.val_f1);
        }
        s
    }
}

/// Eval-mode probabilities for `windows`, in order.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[FeatureWindow],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = pack_batch(chunk.iter().map(|w| &w.values))?;
        let (probs, _) = model_forward(&batch, params, config, Mode::Eval, &mut rng)?;
        out.extend(probs);
    }
    Ok(out)
}

/// Loss and thresholded metrics of the model on `windows`.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[FeatureWindow],
    weights: (f64, f64),
    batch_size: usize,
) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let probs = predict(params, config, windows, batch_size)?;
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let (loss, _) = batch_loss(&probs, &labels, weights)?;
    metrics_report(confusion_counts(&probs, &labels, DEFAULT_THRESHOLD)?, loss)
}

/// Splits `n` items into `⌊n / size⌋` (at least one) nearly equal batches,
/// so no batch is smaller than `size` unless `n` itself is.
fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let count = (n / size).max(1);
    let (base, extra) = (n / count, n % count);
    let mut at = 0;
    (0..count)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = (at, len);
            at += len;
            r
        })
        .collect()
}

/// Trains from a fresh seeded initialization.
///
/// Each epoch shuffles the training windows, runs train-mode mini-batches
/// through forward, loss, backward and one optimizer step, then scores the
/// validation split in eval mode. With patience enabled, the parameters of
/// the lowest validation loss are returned.
pub fn train_model(
    bundle: &SplitBundle,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    model.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if bundle.validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if model.batchnorm && bundle.train.len() < 2 {
        return Err(Error::DegenerateBatch(bundle.train.len()));
    }
    let train =
        if cfg.use_oversampling { oversample_minority(bundle.train.clone(), cfg.seed)? } else { bundle.train.clone() };
    let validation = if cfg.oversample_validation {
        oversample_minority(bundle.validation.clone(), cfg.seed.wrapping_add(1))?
    } else {
        bundle.validation.clone()
    };
    let labels: Vec<u8> = train.iter().map(|w| w.label).collect();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let weights = match cfg.class_weights {
        ClassWeighting::Fixed(a, b) => (a, b),
        ClassWeighting::Balanced => class_weights(&labels)?,
    };

    let mut params = init_params(model, cfg.seed, pos, train.len() - pos)?;
    let mut state = OptimizerState::new(&params.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let bounds = batch_bounds(train.len(), cfg.batch_size);
    let mut step = 0u64;

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, &(start, len)) in bounds.iter().enumerate() {
            let idx = &order[start..start + len];
            let batch = pack_batch(idx.iter().map(|&i| &train[i].values))?;
            let batch_labels: Vec<u8> = idx.iter().map(|&i| train[i].label).collect();
            let (probs, trace) = model_forward(&batch, &params, model, Mode::Train, &mut rng)?;
            let (loss, upstream) = match batch_loss(&probs, &batch_labels, weights) {
                Ok((l, u)) if l.is_finite() => (l, u),
                Ok((l, _)) => return Err(Error::NonFiniteLoss { epoch, batch: b, loss: l }),
                Err(Error::DomainError(p)) => return Err(Error::NonFiniteLoss { epoch, batch: b, loss: p }),
                Err(e) => return Err(e),
            };
            let grads = model_backward(&trace, &params, model, &upstream)?;
            params.absorb_batch_stats(&trace);
            step += 1;
            optimizer_step(&mut params.weights, &grads, &mut state, cfg.optimizer, cfg.learning_rate, step)?;
            loss_sum += loss * len as f64;
        }
        let val = evaluate(&params, model, &validation, weights, cfg.batch_size.max(64))?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: bounds.len(), loss: val.loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_f1: val.f1,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4} f1 {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy,
            record.val_f1
        );
        records.push(record);

        if cfg.early_stop_patience > 0 {
            if best.as_ref().is_none_or(|(l, _, _)| val.loss < *l) {
                best = Some((val.loss, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let last = records.len();
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, last),
    };
    Ok((params, TrainHistory { records, best_epoch, stopped_early, class_weights: weights }))
}
