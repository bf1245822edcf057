//! First-order optimizers over [`Weights`] blocks.

use crate::error::{Error, Result};
use crate::rnn::Weights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Optimizer::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            Optimizer::Sgd { momentum } => (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers: Adam's first and second moments, or SGD velocity (in `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Weights,
    pub v: Weights,
}

impl OptimizerState {
    pub fn new(like: &Weights) -> Self {
        OptimizerState { m: like.zeros_like(), v: like.zeros_like() }
    }
}

/// Applies one update. `step` is 1-based and drives Adam's bias correction.
pub fn optimizer_step(
    params: &mut Weights,
    grads: &Weights,
    state: &mut OptimizerState,
    optimizer: Optimizer,
    learning_rate: f64,
    step: u64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
    }
    let g = grads.blocks();
    match optimizer {
        Optimizer::Adam { beta1, beta2, eps } => {
            let t = step.max(1) as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in
                params.blocks_mut().into_iter().zip(g).zip(state.m.blocks_mut()).zip(state.v.blocks_mut())
            {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p[i] -= learning_rate * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Optimizer::Sgd { momentum } => {
            for ((p, g), vel) in params.blocks_mut().into_iter().zip(g).zip(state.m.blocks_mut()) {
                for i in 0..p.len() {
                    vel[i] = momentum * vel[i] + g[i];
                    p[i] -= learning_rate * vel[i];
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{CellKind, ModelConfig};

    fn unit() -> Weights {
        let c = ModelConfig { layers: 1, hidden: 1, batchnorm: false, ..ModelConfig::desk(CellKind::Gru, 1, 1) };
        Weights::zeros(&c)
    }

    #[test]
    fn adam_first_step() {
        let mut p = unit();
        let mut g = unit();
        g.head_b = 1.0;
        let mut s = OptimizerState::new(&p);
        optimizer_step(&mut p, &g, &mut s, Optimizer::default(), 1e-3, 1).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        assert!((p.head_b + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p.head_w, vec![0.0]);
    }

    #[test]
    fn adam_zero_gradient_is_no_op() {
        let mut p = unit();
        p.head_b = 0.3;
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        optimizer_step(&mut p, &unit(), &mut s, Optimizer::default(), 1e-3, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_steps() {
        let mut p = unit();
        let mut g = unit();
        g.head_b = 2.0;
        let mut s = OptimizerState::new(&p);
        optimizer_step(&mut p, &g, &mut s, Optimizer::Sgd { momentum: 0.0 }, 0.1, 1).unwrap();
        assert!((p.head_b + 0.2).abs() < 1e-15);
        let mut p = unit();
        let mut s = OptimizerState::new(&p);
        let opt = Optimizer::Sgd { momentum: 0.5 };
        optimizer_step(&mut p, &g, &mut s, opt, 0.1, 1).unwrap();
        optimizer_step(&mut p, &g, &mut s, opt, 0.1, 2).unwrap();
        // velocities 2, then 3
        assert!((p.head_b + 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_checked() {
        let mut p = unit();
        let c = ModelConfig { layers: 1, hidden: 2, batchnorm: false, ..ModelConfig::desk(CellKind::Gru, 1, 1) };
        let g = Weights::zeros(&c);
        let mut s = OptimizerState::new(&p);
        assert!(matches!(
            optimizer_step(&mut p, &g, &mut s, Optimizer::default(), 1e-3, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
