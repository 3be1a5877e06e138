use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::he_weight;
use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::dynamics::{Block, StepContext};
use crate::error::{invalid, Result};

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Relu,
    Tanh,
    #[serde(alias = "linear")]
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Affine map `x W (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_weight(rng, d_in, d_out))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?) } else { None };
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).last_dim() != self.d_in {
            return Err(invalid(
                "linear",
                format!("input width {} does not match {}", tape.value(x).last_dim(), self.d_in),
            ));
        }
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// LayerNorm gain and bias over the last axis.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// `act(h W + b)` with a square `W`.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub linear: Linear,
    pub activation: Activation,
}

impl DenseBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, name, width, width, true, rng)?,
            activation,
        })
    }
}

impl Block for DenseBlock {
    fn width(&self) -> usize {
        self.linear.d_in
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.linear.param_ids()
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, _ctx: &StepContext) -> Result<Var> {
        let y = self.linear.forward(tape, store, h)?;
        self.activation.apply(tape, y)
    }
}
