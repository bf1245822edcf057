//! Single-timestep GRU and LSTM kernels, forward and backward.
//!
//! The forward kernels take the input projection `W·x + b` precomputed for
//! every gate so a layer can project its whole input sequence at once.

use crate::error::{Error, Result};

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::RecurrentWeights;

/// GRU step. `xw` is `[z, r, h̃]` pre-activations from the input side.
/// Writes gate activations `[z, r, h̃]` into `gates` and the new state into `h`.
pub(crate) fn gru_forward(u: &[f64], xw: &[f64], h_prev: &[f64], gates: &mut [f64], h: &mut [f64]) {
    let n = h_prev.len();
    gates.copy_from_slice(xw);
    matvec_acc(u, n, 0, h_prev, &mut gates[..2 * n]);
    for v in &mut gates[..2 * n] {
        *v = sigmoid(*v);
    }
    let rh: Vec<f64> = gates[n..2 * n].iter().zip(h_prev).map(|(r, h)| r * h).collect();
    matvec_acc(u, n, 2 * n, &rh, &mut gates[2 * n..]);
    for v in &mut gates[2 * n..] {
        *v = v.tanh();
    }
    for j in 0..n {
        let z = gates[j];
        h[j] = (1.0 - z) * h_prev[j] + z * gates[2 * n + j];
    }
}

/// Backward through one GRU step.
///
/// `dh` is the total gradient reaching `h_t`. Accumulates `∂L/∂U` into `du`,
/// writes gate pre-activation gradients into `da` and `∂L/∂h_{t−1}` into `dh_prev`.
pub(crate) fn gru_backward(
    u: &[f64],
    gates: &[f64],
    h_prev: &[f64],
    dh: &[f64],
    du: &mut [f64],
    da: &mut [f64],
    dh_prev: &mut [f64],
) {
    let n = h_prev.len();
    let (z, rest) = gates.split_at(n);
    let (r, cand) = rest.split_at(n);
    for j in 0..n {
        let dz = dh[j] * (cand[j] - h_prev[j]);
        let dcand = dh[j] * z[j];
        dh_prev[j] = dh[j] * (1.0 - z[j]);
        da[j] = dz * z[j] * (1.0 - z[j]);
        da[2 * n + j] = dcand * (1.0 - cand[j] * cand[j]);
    }
    // candidate path through U_h · (r ⊙ h_prev)
    let mut drh = vec![0.0; n];
    matvec_t_acc(u, n, 2 * n, &da[2 * n..], &mut drh);
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    outer_acc(du, n, 2 * n, &da[2 * n..], &rh);
    for j in 0..n {
        let dr = drh[j] * h_prev[j];
        dh_prev[j] += drh[j] * r[j];
        da[n + j] = dr * r[j] * (1.0 - r[j]);
    }
    outer_acc(du, n, 0, &da[..2 * n], h_prev);
    matvec_t_acc(u, n, 0, &da[..2 * n], dh_prev);
}

/// LSTM step. `xw` is `[f, i, o, g]` pre-activations from the input side.
pub(crate) fn lstm_forward(
    u: &[f64],
    xw: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    h: &mut [f64],
) {
    let n = h_prev.len();
    gates.copy_from_slice(xw);
    matvec_acc(u, n, 0, h_prev, gates);
    for v in &mut gates[..3 * n] {
        *v = sigmoid(*v);
    }
    for v in &mut gates[3 * n..] {
        *v = v.tanh();
    }
    for j in 0..n {
        let (f, i, o, g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

/// Backward through one LSTM step. `dh`/`dc` are the total gradients
/// reaching `h_t`/`c_t`; outputs the gradients for `h_{t−1}`/`c_{t−1}`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    u: &[f64],
    gates: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    c: &[f64],
    dh: &[f64],
    dc: &[f64],
    du: &mut [f64],
    da: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
) {
    let n = h_prev.len();
    for j in 0..n {
        let (f, i, o, g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
        let tc = c[j].tanh();
        let d_o = dh[j] * tc;
        let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
        let df = dct * c_prev[j];
        let di = dct * g;
        let dg = dct * i;
        dc_prev[j] = dct * f;
        da[j] = df * f * (1.0 - f);
        da[n + j] = di * i * (1.0 - i);
        da[2 * n + j] = d_o * o * (1.0 - o);
        da[3 * n + j] = dg * (1.0 - g * g);
    }
    outer_acc(du, n, 0, da, h_prev);
    dh_prev.fill(0.0);
    matvec_t_acc(u, n, 0, da, dh_prev);
}

fn input_projection(layer: &RecurrentWeights, x: &[f64]) -> Vec<f64> {
    let mut xw = layer.b.clone();
    matvec_acc(layer.w.as_slice(), layer.input(), 0, x, &mut xw);
    xw
}

fn check_step(layer: &RecurrentWeights, gates: usize, x: &[f64], h_prev: &[f64]) -> Result<()> {
    let n = layer.hidden();
    if layer.w.rows() != gates * n || layer.u.rows() != gates * n || layer.b.len() != gates * n {
        return Err(Error::ShapeMismatch(format!("layer weights are not {gates}-gate blocks of {n} units")));
    }
    if x.len() != layer.input() {
        return Err(Error::ShapeMismatch(format!("input width {} vs {}", x.len(), layer.input())));
    }
    if h_prev.len() != n {
        return Err(Error::ShapeMismatch(format!("state width {} vs {n}", h_prev.len())));
    }
    Ok(())
}

/// Activations of one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell(x: &[f64], h_prev: &[f64], layer: &RecurrentWeights) -> Result<GruStep> {
    check_step(layer, 3, x, h_prev)?;
    let n = layer.hidden();
    let xw = input_projection(layer, x);
    let mut gates = vec![0.0; 3 * n];
    let mut h = vec![0.0; n];
    gru_forward(layer.u.as_slice(), &xw, h_prev, &mut gates, &mut h);
    Ok(GruStep { update: gates[..n].to_vec(), reset: gates[n..2 * n].to_vec(), candidate: gates[2 * n..].to_vec(), h })
}

/// Activations of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub candidate: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// `f, i, o = σ(·)`, `g = tanh(·)`, `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], layer: &RecurrentWeights) -> Result<LstmStep> {
    check_step(layer, 4, x, h_prev)?;
    let n = layer.hidden();
    if c_prev.len() != n {
        return Err(Error::ShapeMismatch(format!("cell state width {} vs {n}", c_prev.len())));
    }
    let xw = input_projection(layer, x);
    let mut gates = vec![0.0; 4 * n];
    let mut c = vec![0.0; n];
    let mut h = vec![0.0; n];
    lstm_forward(layer.u.as_slice(), &xw, h_prev, c_prev, &mut gates, &mut c, &mut h);
    Ok(LstmStep {
        forget: gates[..n].to_vec(),
        input: gates[n..2 * n].to_vec(),
        output: gates[2 * n..3 * n].to_vec(),
        candidate: gates[3 * n..].to_vec(),
        c,
        h,
    })
}
