use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mse, LearningCurve, Optimizer, OptimizerConfig};
use crate::dataio::{FeatureMatrix, GraphDataset};
use crate::diffcore::{ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};

/// Datasets with one scalar target per example.
pub trait Targets {
    fn len(&self) -> usize;
    fn target(&self, i: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Targets for FeatureMatrix {
    fn len(&self) -> usize {
        self.rows
    }

    fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

impl Targets for GraphDataset {
    fn len(&self) -> usize {
        self.graphs.len()
    }

    fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

/// A model predicting one scalar per example.
pub trait Regressor {
    type Data: Targets + ?Sized;

    /// Predictions `[rows.len()]`. `rng` switches on training-mode
    /// stochasticity such as dropout.
    fn predict(&self, tape: &mut Tape, store: &ParamStore, data: &Self::Data, rows: &[usize], rng: Option<&mut dyn RngCore>) -> Result<Var>;

    /// Block evaluations performed so far, if the model counts them.
    fn block_evaluations(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Gradient-norm clipping threshold.
    pub clip_grad: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            clip_grad: None,
        }
    }
}

/// Curve of one run plus the training objective per epoch.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub curve: LearningCurve,
    /// Mean training objective per record (MSE or cross-entropy).
    pub objective: Vec<f64>,
    /// Why training stopped early, if it did.
    pub divergence: Option<String>,
    pub block_evaluations: usize,
}

const EVAL_CHUNK: usize = 256;

/// Root mean squared error over `rows`, evaluated without dropout.
pub fn evaluate_rmse<M: Regressor>(model: &M, store: &ParamStore, data: &M::Data, rows: &[usize]) -> Result<f64> {
    let mut sq = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let pred = model.predict(&mut tape, store, data, chunk, None)?;
        sq += tape
            .value(pred)
            .data()
            .iter()
            .zip(chunk)
            .map(|(p, &i)| (p - data.target(i)).powi(2))
            .sum::<f64>();
    }
    Ok((sq / rows.len() as f64).sqrt())
}

/// Fixed-epoch minibatch training on the MSE objective; the logged metric
/// is RMSE. Batches are reshuffled every epoch from `opts.seed`.
pub fn train_run<M: Regressor>(
    model: &M,
    store: &mut ParamStore,
    data: &M::Data,
    train: &[usize],
    val: &[usize],
    opts: &TrainOptions,
) -> Result<RunOutcome> {
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(invalid("train_run", "epochs and batch_size must be at least 1"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(invalid("train_run", "empty train or validation split"));
    }
    let start_evals = model.block_evaluations();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut optimizer = Optimizer::new(opts.optimizer, store);
    let mut order = train.to_vec();
    let mut curve = LearningCurve::new("rmse");
    let mut objective = Vec::with_capacity(opts.epochs);
    let mut divergence = None;
    let clock = Instant::now();
    'epochs: for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let targets: Vec<f64> = batch.iter().map(|&i| data.target(i)).collect();
            let mut tape = Tape::new();
            let pred = model.predict(&mut tape, store, data, batch, Some(&mut rng as &mut dyn RngCore))?;
            let loss = mse(&mut tape, pred, &targets)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                divergence = Some(format!("non-finite loss in epoch {epoch}"));
                break 'epochs;
            }
            sq_sum += value * batch.len() as f64;
            tape.backward_into(loss, store)?;
            if let Some(max) = opts.clip_grad {
                store.clip_grad_norm(max);
            }
            if let Err(e) = optimizer.step(store) {
                match e {
                    Error::NonFiniteGradient(_) => {
                        divergence = Some(format!("epoch {epoch}: {e}"));
                        store.zero_grads();
                        break 'epochs;
                    }
                    e => return Err(e),
                }
            }
        }
        let train_mse = sq_sum / order.len() as f64;
        let val_rmse = evaluate_rmse(model, store, data, val)?;
        if !val_rmse.is_finite() {
            divergence = Some(format!("non-finite validation metric in epoch {epoch}"));
            break;
        }
        objective.push(train_mse);
        curve.push(epoch, train_mse.sqrt(), val_rmse, clock.elapsed().as_secs_f64() * 1e3);
    }
    curve.diverged = divergence.is_some();
    Ok(RunOutcome {
        curve,
        objective,
        divergence,
        block_evaluations: model.block_evaluations() - start_evals,
    })
}
