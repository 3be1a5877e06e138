use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::he_weight;
use super::Activation;
use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::dynamics::{Block, StepContext};
use crate::error::{invalid, Result};

/// How neighbour embeddings are pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// `act(h_v W_self + agg_{u -> v}(h_u) W_neigh + b)`.
#[derive(Clone, Debug)]
pub struct MessageBlock {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub activation: Activation,
    pub aggregation: Aggregation,
}

impl MessageBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        activation: Activation,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_self: store.add(format!("{name}.w_self"), he_weight(rng, width, width))?,
            w_neigh: store.add(format!("{name}.w_neigh"), he_weight(rng, width, width))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
            width,
            activation,
            aggregation,
        })
    }
}

impl Block for MessageBlock {
    fn width(&self) -> usize {
        self.width
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_self, self.w_neigh, self.bias]
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
        let StepContext::Graph(topo) = ctx else {
            return Err(invalid("message_block", "needs a graph context"));
        };
        if tape.value(h).last_dim() != self.width {
            return Err(invalid("message_block", format!("width {} does not match {}", tape.value(h).last_dim(), self.width)));
        }
        let agg = tape.aggregate(h, topo.clone(), self.aggregation == Aggregation::Mean)?;
        let ws = tape.param(store, self.w_self);
        let wn = tape.param(store, self.w_neigh);
        let b = tape.param(store, self.bias);
        let own = tape.matmul(h, ws)?;
        let msg = tape.matmul(agg, wn)?;
        let y = tape.add(own, msg)?;
        let y = tape.add(y, b)?;
        self.activation.apply(tape, y)
    }
}
