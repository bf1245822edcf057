//! Central finite-difference verification of [`model_backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rnn::{
    init_params, model_backward, model_forward_with_masks, sample_dropout_masks, Batch, Mode, ModelConfig, ModelParams,
};

use super::batch_loss;

pub const FD_STEP: f64 = 1e-5;
/// Batch size used by [`gradient_check`].
pub const CHECK_BATCH: usize = 4;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Builds a random model and batch from `seed`, then compares every
/// analytic parameter gradient with a central difference. Dropout masks
/// are drawn once and frozen; batch-norm uses train-mode statistics.
/// Returns the largest relative error.
pub fn gradient_check(config: &ModelConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(config, seed, 1, 1)?;
    // Move every parameter off its structured initial value.
    for block in params.weights.blocks_mut() {
        block.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    let batch = Batch {
        batch: CHECK_BATCH,
        time: config.window_length,
        features: config.input_features,
        data: (0..CHECK_BATCH * config.window_length * config.input_features)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    let labels: Vec<u8> = (0..CHECK_BATCH).map(|i| (i % 2) as u8).collect();
    let weights = (1.0, 1.5);
    let masks = sample_dropout_masks(config, CHECK_BATCH, &mut rng);

    let loss_at = |p: &ModelParams| -> Result<f64> {
        let (probs, _) = model_forward_with_masks(&batch, p, config, Mode::Train, masks.as_deref())?;
        Ok(batch_loss(&probs, &labels, weights)?.0)
    };

    let (probs, trace) = model_forward_with_masks(&batch, &params, config, Mode::Train, masks.as_deref())?;
    let (_, upstream) = batch_loss(&probs, &labels, weights)?;
    let analytic = model_backward(&trace, &params, config, &upstream)?.to_flat();

    let mut flat = params.weights.to_flat();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = flat[i];
        flat[i] = orig + FD_STEP;
        params.weights.set_flat(&flat)?;
        let plus = loss_at(&params)?;
        flat[i] = orig - FD_STEP;
        params.weights.set_flat(&flat)?;
        let minus = loss_at(&params)?;
        flat[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    params.weights.set_flat(&flat)?;
    Ok(worst)
}
