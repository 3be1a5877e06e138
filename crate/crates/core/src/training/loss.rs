use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Rmse,
    CrossEntropy,
}

/// Mean squared error between `pred` and constant targets.
pub fn mse(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    if target.is_empty() {
        return Err(invalid("mse", "empty batch"));
    }
    let t = tape.constant(Tensor::new(tape.shape(pred).to_vec(), target.to_vec())?);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

pub fn rmse(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let m = mse(tape, pred, target)?;
    tape.sqrt(m)
}

/// Mean negative log-softmax of the target classes.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() {
        return Err(invalid("cross_entropy", "empty batch"));
    }
    tape.cross_entropy(logits, Rc::from(targets))
}

/// Plain-number mean squared error.
pub fn mse_value(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}
