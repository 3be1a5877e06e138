//! Experiment configuration: one JSON document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use score_core::dynamics::DepthConfig;
use score_core::models::ModelConfig;
use score_core::training::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    RegressionTabular,
    RegressionGraph,
    LanguageModel,
}

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Feature CSV with a `target` column.
    Csv { path: PathBuf },
    /// Graph JSONL, one record per line.
    GraphJsonl { path: PathBuf },
    /// Plain UTF-8 text.
    Text { path: PathBuf },
    SynthRegression {
        n: usize,
        d: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    SynthGraphs {
        count: usize,
        min_nodes: usize,
        max_nodes: usize,
        #[serde(default)]
        seed: u64,
    },
    SynthText {
        bytes: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSpec {
    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Self::Csv { path } | Self::GraphJsonl { path } | Self::Text { path } => Some(path),
            _ => None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Self::Csv { path } | Self::GraphJsonl { path } | Self::Text { path } => Some(path),
            _ => None,
        }
    }

    fn task(&self) -> Task {
        match self {
            Self::Csv { .. } | Self::SynthRegression { .. } => Task::RegressionTabular,
            Self::GraphJsonl { .. } | Self::SynthGraphs { .. } => Task::RegressionGraph,
            Self::Text { .. } | Self::SynthText { .. } => Task::LanguageModel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub depth: DepthConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Epoch budget of regression tasks.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Iteration budget of the language-model task.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// One repetition per seed; fold `i` of seed `s` trains with `s + i`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Gradient-norm clipping; unset means 1.0 for text and off otherwise.
    #[serde(default)]
    pub clip_grad: Option<f64>,
    pub data: DataSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    150
}
fn default_iterations() -> usize {
    2000
}
fn default_eval_every() -> usize {
    100
}
fn default_eval_batches() -> usize {
    8
}
fn default_folds() -> usize {
    5
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Parses and normalizes a JSON document. Relative paths are kept as
    /// written; see [`load`](Self::load) for file-relative resolution.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.depth = cfg.depth.normalized();
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.data.path_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Effective clipping threshold.
    pub fn clip(&self) -> Option<f64> {
        match (self.clip_grad, self.task) {
            (Some(c), _) => Some(c),
            (None, Task::LanguageModel) => Some(1.0),
            (None, _) => None,
        }
    }

    /// Checks every field before anything is written.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(CliError::config(format!("{field}: {msg}")));
        self.depth.validate().map_err(|e| CliError::config(e.to_string()))?;
        if self.data.task() != self.task {
            return bad("data.source", "does not match the task");
        }
        let m = &self.model;
        if m.width == 0 {
            return bad("model.width", "must be positive");
        }
        let h = &m.head;
        if h.hidden.contains(&0) || h.score_width == 0 || h.score_steps == 0 {
            return bad("model.head", "widths and steps must be positive");
        }
        if !(0.0..1.0).contains(&h.dropout) {
            return bad("model.head.dropout", "must lie in [0, 1)");
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return bad("optimizer.lr", "must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        if let Some(c) = self.clip_grad {
            if !(c.is_finite() && c > 0.0) {
                return bad("clip_grad", "must be positive and finite");
            }
        }
        match self.task {
            Task::LanguageModel => {
                if m.heads == 0 || m.width % m.heads != 0 {
                    return bad("model.heads", "must divide model.width");
                }
                if m.context == 0 {
                    return bad("model.context", "must be positive");
                }
                if self.iterations == 0 || self.eval_every == 0 || self.eval_batches == 0 {
                    return bad("iterations", "iterations, eval_every and eval_batches must be positive");
                }
            }
            _ => {
                if self.epochs == 0 {
                    return bad("epochs", "must be positive");
                }
                if self.folds < 2 {
                    return bad("folds", "must be at least 2");
                }
            }
        }
        match &self.data {
            DataSpec::SynthRegression { n, d, noise, .. } => {
                if *n < self.folds || *d == 0 {
                    return bad("data", "needs at least one row per fold and one column");
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return bad("data.noise", "must be a non-negative number");
                }
            }
            DataSpec::SynthGraphs {
                count,
                min_nodes,
                max_nodes,
                ..
            } => {
                if *count < self.folds {
                    return bad("data.count", "needs at least one graph per fold");
                }
                if *min_nodes == 0 || min_nodes > max_nodes {
                    return bad("data", "node range must satisfy 1 <= min_nodes <= max_nodes");
                }
            }
            DataSpec::SynthText { bytes, .. } => {
                if *bytes == 0 {
                    return bad("data.bytes", "must be positive");
                }
            }
            _ => {}
        }
        if let Some(p) = self.data.path() {
            if !p.is_file() {
                return bad("data.path", &format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }
}
