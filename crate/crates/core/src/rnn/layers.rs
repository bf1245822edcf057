//! Inverted dropout and batch normalization over `batch × time × channels`.

use rand::Rng;

use crate::error::{Error, Result};

use super::{NormAffine, RunningStats};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-element keep mask scaled by `1 / (1 − rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale }).collect()
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 − rate)`; eval mode (or a zero
/// rate) is the identity and returns no mask.
pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, mode: Mode, rng: &mut R) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.to_vec(), None));
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let y = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((y, Some(mask)))
}

/// Cached batch statistics of a train-mode normalization.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn bn_train_forward(x: &[f64], channels: usize, affine: &NormAffine) -> Result<(Vec<f64>, BnCache)> {
    let count = x.len() / channels;
    if count < 2 {
        return Err(Error::DegenerateBatch(count));
    }
    let mut mean = vec![0.0; channels];
    for row in x.chunks_exact(channels) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; channels];
    for row in x.chunks_exact(channels) {
        for c in 0..channels {
            let d = row[c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (i, (&xv, (xh, yv))) in x.iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
        let c = i % channels;
        *xh = (xv - mean[c]) * inv_std[c];
        *yv = affine.gamma[c] * *xh + affine.beta[c];
    }
    Ok((y, BnCache { xhat, inv_std, mean, var }))
}

pub(crate) fn bn_eval_forward(x: &[f64], channels: usize, affine: &NormAffine, running: &RunningStats) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % channels;
            affine.gamma[c] * (v - running.mean[c]) / (running.var[c] + BN_EPS).sqrt() + affine.beta[c]
        })
        .collect()
}

/// Backward of the train-mode transform; accumulates `∂L/∂γ`, `∂L/∂β`
/// and returns `∂L/∂x`.
pub(crate) fn bn_train_backward(
    dy: &[f64],
    channels: usize,
    affine: &NormAffine,
    cache: &BnCache,
    grad: &mut NormAffine,
) -> Vec<f64> {
    let count = (dy.len() / channels) as f64;
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for (i, (&g, &xh)) in dy.iter().zip(&cache.xhat).enumerate() {
        let c = i % channels;
        sum_dy[c] += g;
        sum_dy_xhat[c] += g * xh;
    }
    for c in 0..channels {
        grad.beta[c] += sum_dy[c];
        grad.gamma[c] += sum_dy_xhat[c];
    }
    dy.iter()
        .zip(&cache.xhat)
        .enumerate()
        .map(|(i, (&g, &xh))| {
            let c = i % channels;
            affine.gamma[c] * cache.inv_std[c] / count * (count * g - sum_dy[c] - xh * sum_dy_xhat[c])
        })
        .collect()
}

pub(crate) fn bn_eval_backward(
    dy: &[f64],
    x: &[f64],
    channels: usize,
    affine: &NormAffine,
    running: &RunningStats,
    grad: &mut NormAffine,
) -> Vec<f64> {
    dy.iter()
        .zip(x)
        .enumerate()
        .map(|(i, (&g, &xv))| {
            let c = i % channels;
            let inv = 1.0 / (running.var[c] + BN_EPS).sqrt();
            grad.beta[c] += g;
            grad.gamma[c] += g * (xv - running.mean[c]) * inv;
            g * affine.gamma[c] * inv
        })
        .collect()
}

pub(crate) fn update_running(running: &mut RunningStats, cache: &BnCache) {
    for c in 0..running.mean.len() {
        running.mean[c] = BN_MOMENTUM * running.mean[c] + (1.0 - BN_MOMENTUM) * cache.mean[c];
        running.var[c] = BN_MOMENTUM * running.var[c] + (1.0 - BN_MOMENTUM) * cache.var[c];
    }
}

/// Batch normalization of a flat `batch × time × channels` tensor.
///
/// Train mode normalizes each channel with the batch statistics (over
/// batch and time), then updates `running` with momentum [`BN_MOMENTUM`].
/// Eval mode uses `running` unchanged.
pub fn batchnorm(
    x: &[f64],
    channels: usize,
    affine: &NormAffine,
    running: &mut RunningStats,
    mode: Mode,
) -> Result<Vec<f64>> {
    if channels == 0
        || !x.len().is_multiple_of(channels)
        || affine.gamma.len() != channels
        || running.mean.len() != channels
    {
        return Err(Error::ShapeMismatch(format!("batch-norm over {channels} channels")));
    }
    match mode {
        Mode::Train => {
            let (y, cache) = bn_train_forward(x, channels, affine)?;
            update_running(running, &cache);
            Ok(y)
        }
        Mode::Eval => Ok(bn_eval_forward(x, channels, affine, running)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(c: usize) -> (NormAffine, RunningStats) {
        (NormAffine { gamma: vec![1.0; c], beta: vec![0.0; c] }, RunningStats { mean: vec![0.0; c], var: vec![1.0; c] })
    }

    fn data() -> Vec<f64> {
        (0..60).map(|i| ((i * 37) % 17) as f64 * 0.3 - 1.0 + (i % 3) as f64).collect()
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = data();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), (x.clone(), None));
        assert_eq!(dropout(&x, 0.0, Mode::Eval, &mut rng).unwrap(), (x.clone(), None));
        assert_eq!(dropout(&x, 0.7, Mode::Eval, &mut rng).unwrap(), (x.clone(), None));
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        // Monte-Carlo: mean of y over 2e5 ones should be within 3 standard errors of 1.
        let n = 200_000;
        let rate = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (y, mask) = dropout(&vec![1.0; n], rate, Mode::Train, &mut rng).unwrap();
        assert!(mask.is_some());
        let mean = y.iter().sum::<f64>() / n as f64;
        // Var(y) = (1/(1−p))² · p(1−p) / ... for x = 1: Var = p / (1 − p)
        let se = (rate / (1.0 - rate) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
        let zero_frac = y.iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((zero_frac - rate).abs() < 0.01);
    }

    #[test]
    fn batchnorm_train_standardizes() {
        let (aff, mut run) = identity(3);
        let y = batchnorm(&data(), 3, &aff, &mut run, Mode::Train).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = y.iter().skip(c).step_by(3).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
        // running stats moved toward the batch statistics
        assert!(run.mean.iter().any(|m| *m != 0.0));
    }

    #[test]
    fn batchnorm_affine_contract() {
        let (aff, mut run) = identity(3);
        let base = batchnorm(&data(), 3, &aff, &mut run.clone(), Mode::Train).unwrap();
        let scaled = NormAffine { gamma: vec![2.0; 3], beta: vec![3.0; 3] };
        let y = batchnorm(&data(), 3, &scaled, &mut run, Mode::Train).unwrap();
        for (a, b) in base.iter().zip(&y) {
            assert!((b - (3.0 + 2.0 * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let (aff, mut run) = identity(3);
        let x = data();
        let y = batchnorm(&x, 3, &aff, &mut run, Mode::Eval).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((b - a / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
        }
        assert_eq!(run, identity(3).1);
    }

    #[test]
    fn batchnorm_needs_two_values() {
        let (aff, mut run) = identity(3);
        assert!(matches!(batchnorm(&[1.0, 2.0, 3.0], 3, &aff, &mut run, Mode::Train), Err(Error::DegenerateBatch(1))));
        assert!(batchnorm(&[1.0, 2.0, 3.0], 3, &aff, &mut run, Mode::Eval).is_ok());
    }
}
