use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::init::dropout_mask;
use super::{Activation, DenseBlock, Linear};
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::dynamics::{DepthConfig, DepthStack, IntegratorKind, Schedule, StepContext, Wiring};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    StackedMlp,
    ScoreMlp,
}

/// Regression head on top of a pooled representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Input dropout rate of the stacked head.
    pub dropout: f64,
    /// Hidden widths of the stacked head.
    pub hidden: Vec<usize>,
    /// Width of the recurrent head.
    pub score_width: usize,
    /// Euler steps of the recurrent head; `dt = 1 / score_steps`.
    pub score_steps: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::StackedMlp,
            dropout: 0.1,
            hidden: vec![128, 64, 32],
            score_width: 128,
            score_steps: 4,
        }
    }
}

#[derive(Clone, Debug)]
enum HeadBody {
    Stacked(Vec<Linear>),
    Score { input: Linear, stack: DepthStack<DenseBlock> },
}

/// A configured head; maps `[rows, in_width]` to `[rows]`.
#[derive(Clone, Debug)]
pub struct Head {
    config: HeadConfig,
    in_width: usize,
    body: HeadBody,
    output: Linear,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: HeadConfig, in_width: usize, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(invalid("head", format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let (body, last) = match config.kind {
            HeadKind::StackedMlp => {
                let mut layers = Vec::with_capacity(config.hidden.len());
                let mut prev = in_width;
                for (i, &w) in config.hidden.iter().enumerate() {
                    layers.push(Linear::new(store, &format!("{name}.fc{i}"), prev, w, true, rng)?);
                    prev = w;
                }
                (HeadBody::Stacked(layers), prev)
            }
            HeadKind::ScoreMlp => {
                let width = config.score_width;
                let input = Linear::new(store, &format!("{name}.input"), in_width, width, true, rng)?;
                let depth = DepthConfig::new(Wiring::Score, config.score_steps, IntegratorKind::Euler, Schedule::InverseK)?;
                let stack = DepthStack::build(depth, store, &format!("{name}.recurrence"), |store, n| {
                    DenseBlock::new(store, n, width, Activation::LeakyRelu, rng)
                })?;
                (HeadBody::Score { input, stack }, width)
            }
        };
        let output = Linear::new(store, &format!("{name}.out"), last, 1, true, rng)?;
        Ok(Self {
            config,
            in_width,
            body,
            output,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// `dt` of the recurrent head, if any.
    pub fn dt(&self) -> Option<f64> {
        match &self.body {
            HeadBody::Score { stack, .. } => Some(stack.config().dt()),
            HeadBody::Stacked(_) => None,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = match &self.body {
            HeadBody::Stacked(layers) => layers.iter().flat_map(Linear::param_ids).collect(),
            HeadBody::Score { input, stack } => {
                let mut ids = input.param_ids();
                ids.extend(stack.param_ids());
                ids
            }
        };
        ids.extend(self.output.param_ids());
        ids
    }

    /// `rng` switches on training mode (dropout active).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let t = tape.value(x);
        if t.last_dim() != self.in_width {
            return Err(invalid("head", format!("input width {} does not match {}", t.last_dim(), self.in_width)));
        }
        let rows = t.rows();
        let h = match &self.body {
            HeadBody::Stacked(layers) => {
                let mut h = match rng {
                    Some(rng) if self.config.dropout > 0.0 => {
                        let mask = dropout_mask(rng, tape.value(x).numel(), self.config.dropout);
                        tape.dropout(x, mask)?
                    }
                    _ => x,
                };
                for layer in layers {
                    h = layer.forward(tape, store, h)?;
                    h = tape.leaky_relu(h)?;
                }
                h
            }
            HeadBody::Score { input, stack } => {
                let h = input.forward(tape, store, x)?;
                stack.run(tape, store, h, &StepContext::None)?.last()
            }
        };
        let y = self.output.forward(tape, store, h)?;
        if tape.value(y).ndim() == 1 {
            tape.reshape(y, &[])
        } else {
            tape.reshape(y, &[rows])
        }
    }
}
