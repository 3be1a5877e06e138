use rand::Rng;

use super::{Linear, Norm};
use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::dynamics::{Block, StepContext};
use crate::error::{invalid, Result};

/// Pre-norm decoder block: `x + Attn(LN(x))`, then `+ FFN(LN(.))`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub d_model: usize,
    pub heads: usize,
    pub context: usize,
    pub causal: bool,
    ln1: Norm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Result of one block evaluation together with the attention node, whose
/// weights can be read back through [`Tape::attention_weights`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub out: Var,
    pub attention: Var,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        context: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(invalid("attention_block", format!("{heads} heads do not divide d_model {d_model}")));
        }
        let proj = |store: &mut ParamStore, p: &str, rng: &mut R| Linear::new(store, &format!("{name}.{p}"), d_model, d_model, false, rng);
        Ok(Self {
            d_model,
            heads,
            context,
            causal,
            ln1: Norm::new(store, &format!("{name}.ln1"), d_model)?,
            wq: proj(store, "wq", rng)?,
            wk: proj(store, "wk", rng)?,
            wv: proj(store, "wv", rng)?,
            wo: proj(store, "wo", rng)?,
            ln2: Norm::new(store, &format!("{name}.ln2"), d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, 4 * d_model, true, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * d_model, d_model, true, rng)?,
        })
    }

    /// `x` is `[batch * seq_len, d_model]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, seq_len: usize) -> Result<AttentionOutput> {
        if seq_len > self.context {
            return Err(invalid(
                "attention_block",
                format!("sequence length {seq_len} exceeds context {}", self.context),
            ));
        }
        let n = self.ln1.forward(tape, store, x)?;
        let q = self.wq.forward(tape, store, n)?;
        let k = self.wk.forward(tape, store, n)?;
        let v = self.wv.forward(tape, store, n)?;
        let attention = tape.attention(q, k, v, self.heads, seq_len, self.causal)?;
        let a = self.wo.forward(tape, store, attention)?;
        let x = tape.add(x, a)?;
        let n = self.ln2.forward(tape, store, x)?;
        let f = self.ff1.forward(tape, store, n)?;
        let f = tape.relu(f)?;
        let f = self.ff2.forward(tape, store, f)?;
        let out = tape.add(x, f)?;
        Ok(AttentionOutput { out, attention })
    }
}

impl Block for AttentionBlock {
    fn width(&self) -> usize {
        self.d_model
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.ln1.param_ids();
        for l in [&self.wq, &self.wk, &self.wv, &self.wo] {
            ids.extend(l.param_ids());
        }
        ids.extend(self.ln2.param_ids());
        ids.extend(self.ff1.param_ids());
        ids.extend(self.ff2.param_ids());
        ids
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &StepContext) -> Result<Var> {
        let seq_len = match ctx {
            StepContext::Sequence { seq_len } => *seq_len,
            _ => tape.value(h).rows(),
        };
        Ok(self.forward(tape, store, h, seq_len)?.out)
    }
}
