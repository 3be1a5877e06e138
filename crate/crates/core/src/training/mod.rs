//! Optimizers, losses, cross-validation splits and the seeded training
//! loops that produce learning curves.

mod curve;
mod folds;
mod lm;
mod loss;
mod optim;
mod run;

pub use curve::LearningCurve;
pub use folds::{kfold_split, Fold, FoldSpec};
pub use lm::{train_lm, LmOptions, SequenceModel};
pub use loss::{cross_entropy, mse, mse_value, rmse, LossKind};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use run::{evaluate_rmse, train_run, Regressor, RunOutcome, Targets, TrainOptions};
