use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, LearningCurve, Optimizer, OptimizerConfig, RunOutcome};
use crate::dataio::TextCorpus;
use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};

/// Next-token model over fixed-length windows.
pub trait SequenceModel {
    /// Longest window the model accepts.
    fn context(&self) -> usize;

    /// Logits `[tokens.len(), vocab]` for consecutive windows of `seq_len`.
    fn logits(&self, tape: &mut Tape, store: &ParamStore, tokens: &[usize], seq_len: usize) -> Result<Var>;

    fn block_evaluations(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub iterations: usize,
    pub batch_size: usize,
    /// Window length; at most the model context.
    pub seq_len: usize,
    pub eval_every: usize,
    /// Windows drawn from each split per evaluation.
    pub eval_batches: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub clip_grad: Option<f64>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            seq_len: 32,
            eval_every: 100,
            eval_batches: 8,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            clip_grad: Some(1.0),
        }
    }
}

/// Inputs and next-token targets of `batch` random windows from `ids`.
fn sample_windows(rng: &mut ChaCha8Rng, ids: &[usize], batch: usize, seq_len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut x = Vec::with_capacity(batch * seq_len);
    let mut y = Vec::with_capacity(batch * seq_len);
    for _ in 0..batch {
        let start = rng.random_range(0..ids.len() - seq_len);
        x.extend_from_slice(&ids[start..start + seq_len]);
        y.extend_from_slice(&ids[start + 1..start + seq_len + 1]);
    }
    (x, y)
}

fn estimate_loss<M: SequenceModel>(model: &M, store: &ParamStore, ids: &[usize], opts: &LmOptions, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..opts.eval_batches {
        let (x, y) = sample_windows(&mut rng, ids, opts.batch_size, opts.seq_len);
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, store, &x, opts.seq_len)?;
        let loss = cross_entropy(&mut tape, logits, &y)?;
        total += tape.value(loss).data()[0];
    }
    Ok(total / opts.eval_batches as f64)
}

/// Iteration-budgeted next-character training.
///
/// Both splits are evaluated at iteration 0, every `eval_every`
/// iterations and after the last iteration, always on the same windows.
pub fn train_lm<M: SequenceModel>(model: &M, store: &mut ParamStore, corpus: &TextCorpus, opts: &LmOptions) -> Result<RunOutcome> {
    if opts.seq_len == 0 || opts.seq_len > model.context() {
        return Err(invalid("train_lm", format!("seq_len {} outside 1..={}", opts.seq_len, model.context())));
    }
    if opts.batch_size == 0 || opts.eval_every == 0 || opts.eval_batches == 0 {
        return Err(invalid("train_lm", "batch_size, eval_every and eval_batches must be positive"));
    }
    if corpus.train().len() <= opts.seq_len || corpus.val().len() <= opts.seq_len {
        return Err(invalid("train_lm", "corpus splits are shorter than one window"));
    }
    let start_evals = model.block_evaluations();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval_seed = opts.seed ^ 0x5eed_e7a1;
    let mut optimizer = Optimizer::new(opts.optimizer, store);
    let mut curve = LearningCurve::new("cross_entropy");
    let mut objective = Vec::new();
    let mut divergence = None;
    let mut running = (0.0, 0usize);
    let clock = Instant::now();
    for it in 0..=opts.iterations {
        if it % opts.eval_every == 0 || it == opts.iterations {
            let train = estimate_loss(model, store, corpus.train(), opts, eval_seed)?;
            let val = estimate_loss(model, store, corpus.val(), opts, eval_seed)?;
            if !(train.is_finite() && val.is_finite()) {
                divergence = Some(format!("non-finite evaluation loss at iteration {it}"));
                break;
            }
            curve.push(it, train, val, clock.elapsed().as_secs_f64() * 1e3);
            objective.push(if running.1 > 0 { running.0 / running.1 as f64 } else { train });
            running = (0.0, 0);
        }
        if it == opts.iterations {
            break;
        }
        let (x, y) = sample_windows(&mut rng, corpus.train(), opts.batch_size, opts.seq_len);
        let mut tape = Tape::new();
        let logits = model.logits(&mut tape, store, &x, opts.seq_len)?;
        let loss = cross_entropy(&mut tape, logits, &y)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            divergence = Some(format!("non-finite loss at iteration {it}"));
            break;
        }
        running.0 += value;
        running.1 += 1;
        tape.backward_into(loss, store)?;
        if let Some(max) = opts.clip_grad {
            store.clip_grad_norm(max);
        }
        match optimizer.step(store) {
            Ok(()) => {}
            Err(e @ Error::NonFiniteGradient(_)) => {
                divergence = Some(format!("iteration {it}: {e}"));
                store.zero_grads();
                break;
            }
            Err(e) => return Err(e),
        }
    }
    curve.diverged = divergence.is_some();
    Ok(RunOutcome {
        curve,
        objective,
        divergence,
        block_evaluations: model.block_evaluations() - start_evals,
    })
}
