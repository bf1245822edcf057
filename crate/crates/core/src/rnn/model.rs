//! Full-model forward pass and backpropagation through time.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::cell::{gru_backward, gru_forward, lstm_backward, lstm_forward};
use super::layers::{
    bn_eval_backward, bn_eval_forward, bn_train_backward, bn_train_forward, dropout_mask, update_running, BnCache,
};
use super::linalg::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::{CellKind, ModelConfig, ModelParams, Pooling, RecurrentWeights, Weights};

use super::layers::Mode;

/// Head probabilities are kept inside `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

/// A `batch × time × features` input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub time: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

/// Stacks equally shaped `time × features` windows into one batch.
pub fn pack_batch<'a, I>(windows: I) -> Result<Batch>
where
    I: IntoIterator<Item = &'a Matrix>,
{
    let mut data = Vec::new();
    let mut shape = None;
    let mut batch = 0;
    for m in windows {
        match shape {
            None => shape = Some(m.shape()),
            Some(s) if s != m.shape() => {
                return Err(Error::ShapeMismatch(format!("window {:?} in a batch of {:?}", m.shape(), s)))
            }
            _ => {}
        }
        data.extend_from_slice(m.as_slice());
        batch += 1;
    }
    let (time, features) = shape.ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    Ok(Batch { batch, time, features, data })
}

#[derive(Debug, Clone, PartialEq)]
enum NormTrace {
    None,
    Train(BnCache),
    /// Input to the eval-mode transform (needed for its backward pass).
    Eval(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
struct LayerTrace {
    input: Vec<f64>,
    gates: Vec<f64>,
    hidden: Vec<f64>,
    /// LSTM cell states; empty for GRU.
    cells: Vec<f64>,
    mask: Option<Vec<f64>>,
    norm: NormTrace,
}

/// Activations cached by [`model_forward`] for [`model_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub batch: usize,
    pub time: usize,
    layers: Vec<LayerTrace>,
    pooled: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Draws one dropout mask per layer, each `batch × time × hidden`.
/// Returns no masks when the rate is zero.
pub fn sample_dropout_masks<R: Rng + ?Sized>(config: &ModelConfig, batch: usize, rng: &mut R) -> Option<Vec<Vec<f64>>> {
    if config.dropout == 0.0 {
        return None;
    }
    let len = batch * config.window_length * config.hidden;
    Some((0..config.layers).map(|_| dropout_mask(len, config.dropout, rng)).collect())
}

/// Forward pass. Train mode samples fresh dropout masks from `rng` and
/// normalizes with batch statistics; eval mode draws nothing from `rng`.
/// Running statistics are not touched; see [`ModelParams::absorb_batch_stats`].
pub fn model_forward<R: Rng + ?Sized>(
    input: &Batch,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let masks = match mode {
        Mode::Train => sample_dropout_masks(config, input.batch, rng),
        Mode::Eval => None,
    };
    model_forward_with_masks(input, params, config, mode, masks.as_deref())
}

/// Forward pass with caller-supplied dropout masks (ignored in eval mode).
pub fn model_forward_with_masks(
    input: &Batch,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    masks: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, ForwardTrace)> {
    check_input(input, params, config)?;
    let (b, t, h) = (input.batch, input.time, config.hidden);
    let masks = if mode == Mode::Train { masks } else { None };
    if let Some(m) = masks {
        if m.len() != config.layers || m.iter().any(|x| x.len() != b * t * h) {
            return Err(Error::ShapeMismatch("dropout masks do not match the batch".into()));
        }
    }

    let mut x = input.data.clone();
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let lw = &params.weights.layers[l];
        let (gates, hidden, cells) = recurrent_forward(config.cell, lw, &x, b, t);
        let mut out = hidden.clone();
        let mask = masks.map(|m| m[l].clone());
        if let Some(m) = &mask {
            out.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let norm = if config.batchnorm {
            let affine = &params.weights.norms[l];
            match mode {
                Mode::Train => {
                    let (y, cache) = bn_train_forward(&out, h, affine)?;
                    out = y;
                    NormTrace::Train(cache)
                }
                Mode::Eval => {
                    let y = bn_eval_forward(&out, h, affine, &params.running[l]);
                    NormTrace::Eval(std::mem::replace(&mut out, y))
                }
            }
        } else {
            NormTrace::None
        };
        let input = std::mem::replace(&mut x, out);
        layers.push(LayerTrace { input, gates, hidden, cells, mask, norm });
    }

    let pooled = pool(config.pooling, &x, b, t, h);
    let w = &params.weights;
    let probs: Vec<f64> =
        pooled.chunks_exact(h).map(|p| sigmoid(dot(&w.head_w, p) + w.head_b).clamp(PROB_EPS, 1.0 - PROB_EPS)).collect();
    let trace = ForwardTrace { mode, batch: b, time: t, layers, pooled, probs: probs.clone() };
    Ok((probs, trace))
}

fn check_input(input: &Batch, params: &ModelParams, config: &ModelConfig) -> Result<()> {
    if input.batch == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if input.features != config.input_features || input.time != config.window_length {
        return Err(Error::ShapeMismatch(format!(
            "input {}×{} but model expects {}×{}",
            input.time, input.features, config.window_length, config.input_features
        )));
    }
    if input.data.len() != input.batch * input.time * input.features {
        return Err(Error::ShapeMismatch("input buffer length".into()));
    }
    params.check(config)
}

fn pool(pooling: Pooling, x: &[f64], b: usize, t: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * h];
    for (s, o) in out.chunks_exact_mut(h).enumerate() {
        let seq = &x[s * t * h..(s + 1) * t * h];
        match pooling {
            Pooling::LastStep => o.copy_from_slice(&seq[(t - 1) * h..]),
            Pooling::Mean => {
                for step in seq.chunks_exact(h) {
                    axpy(1.0 / t as f64, step, o);
                }
            }
        }
    }
    out
}

/// Scans every sample through one recurrent layer from a zero state.
fn recurrent_forward(
    cell: CellKind,
    lw: &RecurrentWeights,
    x: &[f64],
    b: usize,
    t: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = lw.hidden();
    let input = lw.input();
    let g = cell.gates() * h;
    let mut gates = vec![0.0; b * t * g];
    let mut hidden = vec![0.0; b * t * h];
    let mut cells = if cell == CellKind::Lstm { vec![0.0; b * t * h] } else { Vec::new() };
    let zeros = vec![0.0; h];
    let mut xw = vec![0.0; g];
    let w = lw.w.as_slice();
    let u = lw.u.as_slice();
    for s in 0..b {
        for step in 0..t {
            let row = s * t + step;
            xw.copy_from_slice(&lw.b);
            matvec_acc(w, input, 0, &x[row * input..(row + 1) * input], &mut xw);
            let (prev_h, cur_h) = if step == 0 {
                (&zeros[..], &mut hidden[row * h..(row + 1) * h])
            } else {
                let (a, bb) = hidden.split_at_mut(row * h);
                (&a[(row - 1) * h..], &mut bb[..h])
            };
            let gate_slot = &mut gates[row * g..(row + 1) * g];
            match cell {
                CellKind::Gru => gru_forward(u, &xw, prev_h, gate_slot, cur_h),
                CellKind::Lstm => {
                    let (prev_c, cur_c) = if step == 0 {
                        (&zeros[..], &mut cells[row * h..(row + 1) * h])
                    } else {
                        let (a, bb) = cells.split_at_mut(row * h);
                        (&a[(row - 1) * h..], &mut bb[..h])
                    };
                    lstm_forward(u, &xw, prev_h, prev_c, gate_slot, cur_c, cur_h)
                }
            }
        }
    }
    (gates, hidden, cells)
}

/// BPTT through one layer. `dy` is the gradient w.r.t. the layer's hidden
/// sequence; returns the gradient w.r.t. its input sequence when requested.
#[allow(clippy::too_many_arguments)]
fn recurrent_backward(
    cell: CellKind,
    lw: &RecurrentWeights,
    tr: &LayerTrace,
    dy: &[f64],
    b: usize,
    t: usize,
    grad: &mut RecurrentWeights,
    want_input_grad: bool,
) -> Vec<f64> {
    let h = lw.hidden();
    let input = lw.input();
    let g = cell.gates() * h;
    let zeros = vec![0.0; h];
    let mut dx = if want_input_grad { vec![0.0; b * t * input] } else { Vec::new() };
    let mut da = vec![0.0; t * g];
    let mut dh = vec![0.0; h];
    let mut dh_prev = vec![0.0; h];
    let mut dc = vec![0.0; h];
    let mut dc_prev = vec![0.0; h];
    let u = lw.u.as_slice();
    let w = lw.w.as_slice();
    for s in 0..b {
        dh_prev.fill(0.0);
        dc_prev.fill(0.0);
        for step in (0..t).rev() {
            let row = s * t + step;
            for j in 0..h {
                dh[j] = dy[row * h + j] + dh_prev[j];
            }
            let h_prev = if step == 0 { &zeros[..] } else { &tr.hidden[(row - 1) * h..row * h] };
            let gates = &tr.gates[row * g..(row + 1) * g];
            let da_t = &mut da[step * g..(step + 1) * g];
            match cell {
                CellKind::Gru => gru_backward(u, gates, h_prev, &dh, grad.u.as_mut_slice(), da_t, &mut dh_prev),
                CellKind::Lstm => {
                    dc.copy_from_slice(&dc_prev);
                    let c_prev = if step == 0 { &zeros[..] } else { &tr.cells[(row - 1) * h..row * h] };
                    let c = &tr.cells[row * h..(row + 1) * h];
                    lstm_backward(
                        u,
                        gates,
                        h_prev,
                        c_prev,
                        c,
                        &dh,
                        &dc,
                        grad.u.as_mut_slice(),
                        da_t,
                        &mut dh_prev,
                        &mut dc_prev,
                    );
                }
            }
        }
        for step in 0..t {
            let row = s * t + step;
            let da_t = &da[step * g..(step + 1) * g];
            let x_t = &tr.input[row * input..(row + 1) * input];
            outer_acc(grad.w.as_mut_slice(), input, 0, da_t, x_t);
            axpy(1.0, da_t, &mut grad.b);
            if want_input_grad {
                matvec_t_acc(w, input, 0, da_t, &mut dx[row * input..(row + 1) * input]);
            }
        }
    }
    dx
}

/// Exact gradients of the loss w.r.t. every trainable parameter, given
/// `upstream[i] = ∂L/∂p_i` for each output probability.
pub fn model_backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    config: &ModelConfig,
    upstream: &[f64],
) -> Result<Weights> {
    let (b, t, h) = (trace.batch, trace.time, config.hidden);
    if upstream.len() != b || trace.probs.len() != b {
        return Err(Error::TraceMismatch(format!("{} upstream gradients for a batch of {b}", upstream.len())));
    }
    if trace.layers.len() != config.layers || t != config.window_length || trace.pooled.len() != b * h {
        return Err(Error::TraceMismatch("trace was produced by a different model configuration".into()));
    }
    for (l, lt) in trace.layers.iter().enumerate() {
        let ok = lt.input.len() == b * t * config.layer_input(l)
            && lt.hidden.len() == b * t * h
            && lt.gates.len() == b * t * h * config.cell.gates()
            && matches!(
                (&lt.norm, config.batchnorm),
                (NormTrace::None, false) | (NormTrace::Train(_), true) | (NormTrace::Eval(_), true)
            );
        if !ok {
            return Err(Error::TraceMismatch(format!("layer {l} activations do not match the configuration")));
        }
    }
    params.check(config).map_err(|e| Error::TraceMismatch(e.to_string()))?;

    let w = &params.weights;
    let mut grads = Weights::zeros(config);

    let mut dpooled = vec![0.0; b * h];
    for s in 0..b {
        let p = trace.probs[s];
        let dlogit = upstream[s] * p * (1.0 - p);
        let pooled = &trace.pooled[s * h..(s + 1) * h];
        axpy(dlogit, pooled, &mut grads.head_w);
        grads.head_b += dlogit;
        axpy(dlogit, &w.head_w, &mut dpooled[s * h..(s + 1) * h]);
    }

    let mut dx = vec![0.0; b * t * h];
    for s in 0..b {
        let dp = &dpooled[s * h..(s + 1) * h];
        match config.pooling {
            Pooling::LastStep => {
                let row = s * t + t - 1;
                dx[row * h..(row + 1) * h].copy_from_slice(dp);
            }
            Pooling::Mean => {
                for step in 0..t {
                    let row = s * t + step;
                    axpy(1.0 / t as f64, dp, &mut dx[row * h..(row + 1) * h]);
                }
            }
        }
    }

    for l in (0..config.layers).rev() {
        let lt = &trace.layers[l];
        match &lt.norm {
            NormTrace::None => {}
            NormTrace::Train(cache) => {
                dx = bn_train_backward(&dx, h, &w.norms[l], cache, &mut grads.norms[l]);
            }
            NormTrace::Eval(bn_in) => {
                dx = bn_eval_backward(&dx, bn_in, h, &w.norms[l], &params.running[l], &mut grads.norms[l]);
            }
        }
        if let Some(mask) = &lt.mask {
            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        dx = recurrent_backward(config.cell, &w.layers[l], lt, &dx, b, t, &mut grads.layers[l], l > 0);
    }
    Ok(grads)
}

impl ModelParams {
    /// Folds a train-mode trace's batch statistics into the running
    /// batch-norm statistics.
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace) {
        for (running, layer) in self.running.iter_mut().zip(&trace.layers) {
            if let NormTrace::Train(cache) = &layer.norm {
                update_running(running, cache);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(cell: CellKind, batchnorm: bool, dropout: f64) -> ModelConfig {
        ModelConfig { hidden: 3, dropout, batchnorm, ..ModelConfig::desk(cell, 2, 4) }
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch { batch: n, time: 4, features: 2, data: (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    fn zero_params(c: &ModelConfig) -> ModelParams {
        let mut p = init_params(c, 0, 1, 1).unwrap();
        p.weights.blocks_mut().into_iter().for_each(|b| b.fill(0.0));
        for n in &mut p.weights.norms {
            n.gamma.fill(1.0);
        }
        p
    }

    #[test]
    fn zero_model_predicts_half() {
        let c = cfg(CellKind::Gru, true, 0.0);
        let p = zero_params(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (probs, _) = model_forward(&batch(5, 1), &p, &c, Mode::Eval, &mut rng).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bias_only_model_predicts_base_rate() {
        let c = cfg(CellKind::Lstm, false, 0.0);
        let mut p = zero_params(&c);
        p.weights.head_b = (1.0f64 / 9.0).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (probs, _) = model_forward(&batch(3, 1), &p, &c, Mode::Eval, &mut rng).unwrap();
        assert!(probs.iter().all(|&v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn eval_is_pure_and_per_sample() {
        let c = cfg(CellKind::Lstm, true, 0.5);
        let p = init_params(&c, 3, 1, 1).unwrap();
        let one = batch(1, 9);
        let mut twice = one.clone();
        twice.batch = 2;
        twice.data.extend(one.data.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = rng.clone();
        let (a, _) = model_forward(&twice, &p, &c, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(rng, before, "eval must not consume randomness");
        let (b, _) = model_forward(&one, &p, &c, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn train_forward_is_reproducible() {
        let c = cfg(CellKind::Gru, true, 0.3);
        let p = init_params(&c, 3, 1, 1).unwrap();
        let x = batch(4, 2);
        let run = || model_forward(&x, &p, &c, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = cfg(CellKind::Gru, true, 0.2);
        let p = init_params(&c, 3, 1, 1).unwrap();
        let (_, tr) = model_forward(&batch(4, 2), &p, &c, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let g = model_backward(&tr, &p, &c, &[0.0; 4]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn trace_mismatch_detected() {
        let c = cfg(CellKind::Gru, false, 0.0);
        let p = init_params(&c, 3, 1, 1).unwrap();
        let (_, tr) = model_forward(&batch(4, 2), &p, &c, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(matches!(model_backward(&tr, &p, &c, &[0.0; 3]), Err(Error::TraceMismatch(_))));
        let other = cfg(CellKind::Gru, true, 0.0);
        let p2 = init_params(&other, 3, 1, 1).unwrap();
        assert!(matches!(model_backward(&tr, &p2, &other, &[0.0; 4]), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn input_shape_checked() {
        let c = cfg(CellKind::Gru, false, 0.0);
        let p = init_params(&c, 3, 1, 1).unwrap();
        let bad = Batch { batch: 1, time: 5, features: 2, data: vec![0.0; 10] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(model_forward(&bad, &p, &c, Mode::Eval, &mut rng), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn running_stats_absorb_batch() {
        let c = cfg(CellKind::Gru, true, 0.0);
        let mut p = init_params(&c, 3, 1, 1).unwrap();
        let (_, tr) = model_forward(&batch(4, 2), &p, &c, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        p.absorb_batch_stats(&tr);
        assert!(p.running[0].mean.iter().any(|m| *m != 0.0));
        assert!(p.running.iter().flat_map(|r| &r.var).all(|v| *v >= 0.0));
    }
}
