use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, used by `adamw` only.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn with_kind(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            ..Self::default()
        }
    }
}

/// Optimizer state: first and second moments per parameter and the step
/// counter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(store),
            v: zeros(store),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Nothing is updated if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        while self.m.len() < store.len() {
            let shape = store.get(crate::diffcore::ParamId(self.m.len())).value.shape().to_vec();
            self.m.push(Tensor::zeros(&shape));
            self.v.push(Tensor::zeros(&shape));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let value = p.value.data_mut();
            let grad = p.grad.data();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in value.iter_mut().zip(grad) {
                        *w -= c.lr * g;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    if c.kind == OptimizerKind::AdamW {
                        let keep = 1.0 - c.lr * c.weight_decay;
                        value.iter_mut().for_each(|w| *w *= keep);
                    }
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for j in 0..value.len() {
                        let g = grad[j];
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        value[j] -= c.lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
        store.zero_grads();
        Ok(())
    }
}
