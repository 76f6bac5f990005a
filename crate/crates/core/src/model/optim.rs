//! Parameter update rules.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, LstmParams};

/// `params - lr * grads`, elementwise.
pub fn sgd_step(params: &LstmParams, grads: &Gradients, lr: f64) -> LstmParams {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr);
    out
}

pub fn sgd_step_in_place(params: &mut LstmParams, grads: &Gradients, lr: f64) {
    params.axpy(-lr, grads);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &LstmParams) -> Self {
        AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One AdamW update in place: bias-corrected moments, with weight decay
/// applied to the parameters directly rather than through the gradient.
pub fn adamw_step(params: &mut LstmParams, grads: &Gradients, state: &mut AdamState, lr: f64, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    let p = params.as_mut_slice();
    for (((p, &g), m), v) in p.iter_mut().zip(grads.as_slice()).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Which update rule a training loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    #[serde(rename = "adamw")]
    AdamW,
}

/// Stateful wrapper so loops can switch rules by configuration.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    AdamW(AdamWConfig, AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, adamw: AdamWConfig, params: &LstmParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::AdamW => Optimizer::AdamW(adamw, AdamState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut LstmParams, grads: &Gradients, lr: f64) {
        match self {
            Optimizer::Sgd => sgd_step_in_place(params, grads, lr),
            Optimizer::AdamW(cfg, state) => adamw_step(params, grads, state, lr, cfg),
        }
    }
}
