//! Stacked GRU/LSTM binary classifier with hand-derived gradients.
//!
//! Each recurrent layer scans the full window and emits its hidden
//! sequence, which then passes through inverted dropout and batch
//! normalization (statistics over batch and time, per channel). A dense
//! sigmoid head reads the pooled hidden state of the top layer.

mod cell;
mod checkpoint;
mod layers;
pub(crate) mod linalg;
mod model;

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use cell::{gru_cell, lstm_cell, GruStep, LstmStep};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Preprocessing,
};
pub use layers::{batchnorm, dropout, Mode, BN_EPS, BN_MOMENTUM};
pub use model::{
    model_backward, model_forward, model_forward_with_masks, pack_batch, sample_dropout_masks, Batch, ForwardTrace,
    PROB_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks stacked in each weight matrix: GRU `[z, r, h̃]`, LSTM `[f, i, o, g]`.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            _ => Err(Error::InvalidConfig(format!("unknown cell kind `{s}`"))),
        }
    }
}

/// How the head reduces the top layer's hidden sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    LastStep,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    /// Drop probability.
    pub dropout: f64,
    pub batchnorm: bool,
    pub input_features: usize,
    pub window_length: usize,
    /// Explicit head bias; `None` derives it from class counts.
    pub output_bias_init: Option<f64>,
    pub pooling: Pooling,
}

impl ModelConfig {
    /// Two layers of 32 units; small enough for laptop-scale runs.
    pub fn desk(cell: CellKind, input_features: usize, window_length: usize) -> Self {
        ModelConfig {
            cell,
            layers: 2,
            hidden: 32,
            dropout: 0.2,
            batchnorm: true,
            input_features,
            window_length,
            output_bias_init: None,
            pooling: Pooling::LastStep,
        }
    }

    /// Seven layers of 360 units with 70 % dropout.
    pub fn large(cell: CellKind, input_features: usize, window_length: usize) -> Self {
        ModelConfig { layers: 7, hidden: 360, dropout: 0.7, ..Self::desk(cell, input_features, window_length) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_features == 0 || self.window_length == 0 {
            return Err(Error::InvalidConfig("layers, hidden, input features and window length must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        if let Some(b) = self.output_bias_init {
            if !b.is_finite() {
                return Err(Error::InvalidConfig("output bias must be finite".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_features
        } else {
            self.hidden
        }
    }
}

/// Weights of one recurrent layer, gate blocks stacked along the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentWeights {
    /// `(gates·H) × input`
    pub w: Matrix,
    /// `(gates·H) × H`
    pub u: Matrix,
    /// `gates·H`
    pub b: Vec<f64>,
}

impl RecurrentWeights {
    pub fn zeros(cell: CellKind, input: usize, hidden: usize) -> Self {
        let g = cell.gates() * hidden;
        RecurrentWeights { w: Matrix::zeros(g, input), u: Matrix::zeros(g, hidden), b: vec![0.0; g] }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }
}

/// Batch-norm scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAffine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Every trainable parameter. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<RecurrentWeights>,
    /// One entry per layer when batch-norm is enabled, otherwise empty.
    pub norms: Vec<NormAffine>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let layers = (0..config.layers)
            .map(|l| RecurrentWeights::zeros(config.cell, config.layer_input(l), config.hidden))
            .collect();
        let norms = if config.batchnorm {
            (0..config.layers)
                .map(|_| NormAffine { gamma: vec![0.0; config.hidden], beta: vec![0.0; config.hidden] })
                .collect()
        } else {
            Vec::new()
        };
        Weights { layers, norms, head_w: vec![0.0; config.hidden], head_b: 0.0 }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.blocks_mut().into_iter().for_each(|b| b.fill(0.0));
        z
    }

    /// Parameter blocks in a fixed order: per layer `w, u, b`; per norm
    /// stage `gamma, beta`; then `head_w, head_b`.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend([l.w.as_slice(), l.u.as_slice(), l.b.as_slice()]);
        }
        for n in &self.norms {
            out.extend([n.gamma.as_slice(), n.beta.as_slice()]);
        }
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.u.as_mut_slice());
            out.push(&mut l.b);
        }
        for n in &mut self.norms {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("expected {} parameters, got {}", self.len(), flat.len())));
        }
        let mut at = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[at..at + b.len()]);
            at += b.len();
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Weights) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Weights,
    /// Batch-norm running statistics, one entry per layer when enabled.
    pub running: Vec<RunningStats>,
}

impl ModelParams {
    /// Checks every dimension against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let want = Weights::zeros(config);
        if !self.weights.same_shape(&want)
            || self
                .weights
                .layers
                .iter()
                .zip(&want.layers)
                .any(|(a, b)| a.w.shape() != b.w.shape() || a.u.shape() != b.u.shape())
        {
            return Err(Error::ShapeMismatch("parameters do not match model configuration".into()));
        }
        let expected_running = if config.batchnorm { config.layers } else { 0 };
        if self.running.len() != expected_running
            || self.running.iter().any(|r| r.mean.len() != config.hidden || r.var.len() != config.hidden)
        {
            return Err(Error::ShapeMismatch("running statistics do not match model configuration".into()));
        }
        if self.running.iter().flat_map(|r| &r.var).any(|v| *v < 0.0) {
            return Err(Error::RangeViolation("negative running variance".into()));
        }
        Ok(())
    }
}

/// Head bias that makes the untrained model predict the positive base rate.
pub fn output_bias(pos_count: usize, neg_count: usize) -> f64 {
    (pos_count as f64 / neg_count as f64).ln()
}

fn glorot(rng: &mut ChaCha8Rng, m: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    m.iter_mut().for_each(|v| *v = dist.sample(rng));
}

/// Seeded initialization: Glorot-uniform weights, zero biases except the
/// LSTM forget gate (1), identity batch-norm, and a head bias of
/// `ln(pos / neg)` unless the config overrides it.
pub fn init_params(config: &ModelConfig, seed: u64, pos_count: usize, neg_count: usize) -> Result<ModelParams> {
    config.validate()?;
    if pos_count == 0 || neg_count == 0 {
        return Err(Error::SingleClass(pos_count + neg_count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Weights::zeros(config);
    let h = config.hidden;
    for (l, layer) in weights.layers.iter_mut().enumerate() {
        let input = config.layer_input(l);
        glorot(&mut rng, layer.w.as_mut_slice(), input, h);
        glorot(&mut rng, layer.u.as_mut_slice(), h, h);
        if config.cell == CellKind::Lstm {
            layer.b[..h].fill(1.0);
        }
    }
    for n in &mut weights.norms {
        n.gamma.fill(1.0);
    }
    glorot(&mut rng, &mut weights.head_w, h, 1);
    weights.head_b = config.output_bias_init.unwrap_or_else(|| output_bias(pos_count, neg_count));
    let running = if config.batchnorm {
        (0..config.layers).map(|_| RunningStats { mean: vec![0.0; h], var: vec![1.0; h] }).collect()
    } else {
        Vec::new()
    };
    Ok(ModelParams { weights, running })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cell: CellKind) -> ModelConfig {
        ModelConfig { hidden: 4, ..ModelConfig::desk(cell, 8, 6) }
    }

    #[test]
    fn bias_from_counts() {
        let p = init_params(&cfg(CellKind::Gru), 1, 50, 50).unwrap();
        assert_eq!(p.weights.head_b, 0.0);
        let p = init_params(&cfg(CellKind::Gru), 1, 100, 900).unwrap();
        // ln(1/9)
        assert!((p.weights.head_b - (-2.197_224_577_336_219_6)).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic_and_well_formed() {
        let c = cfg(CellKind::Lstm);
        let a = init_params(&c, 7, 3, 4).unwrap();
        assert_eq!(a, init_params(&c, 7, 3, 4).unwrap());
        assert_ne!(a, init_params(&c, 8, 3, 4).unwrap());
        a.check(&c).unwrap();
        // forget-gate block
        assert!(a
            .weights
            .layers
            .iter()
            .all(|l| l.b[..4].iter().all(|&b| b == 1.0) && l.b[4..].iter().all(|&b| b == 0.0)));
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.weights.layers[0].w.as_slice().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.running[0].var, vec![1.0; 4]);
    }

    #[test]
    fn shapes() {
        let c = ModelConfig { layers: 3, batchnorm: false, ..cfg(CellKind::Gru) };
        let w = Weights::zeros(&c);
        assert_eq!(w.layers[0].w.shape(), (12, 8));
        assert_eq!(w.layers[1].w.shape(), (12, 4));
        assert_eq!(w.layers[2].u.shape(), (12, 4));
        assert!(w.norms.is_empty());
        assert_eq!(w.len(), 12 * 8 + 12 * 4 + 12 + 2 * (12 * 4 + 12 * 4 + 12) + 4 + 1);
        let flat = w.to_flat();
        let mut w2 = w.clone();
        w2.set_flat(&flat).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { dropout: 1.0, ..cfg(CellKind::Gru) }.validate().is_err());
        assert!(ModelConfig { layers: 0, ..cfg(CellKind::Gru) }.validate().is_err());
        assert!(init_params(&cfg(CellKind::Gru), 1, 0, 5).is_err());
    }
}
