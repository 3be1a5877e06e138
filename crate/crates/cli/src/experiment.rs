//! The `run` subcommand: cross-validated regression or a single-split
//! language-model run, with all artifacts written under one directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use score_core::analysis::{count_params, smoothness_report, ParamReport, SmoothnessReport};
use score_core::dataio::{
    load_graph_dataset, read_feature_csv, synth_graphs, synth_regression, synth_text, tokenize_chars, FeatureMatrix, GraphDataset,
    PreprocessStats, TextCorpus,
};
use score_core::diffcore::{ParamStore, Tape};
use score_core::models::{GraphModel, LanguageModel, TabularModel};
use score_core::training::{kfold_split, train_lm, train_run, LearningCurve, LmOptions, RunOutcome, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSpec, ExperimentConfig, Task};
use crate::error::{CliError, Result};
use crate::plot::{render_svg, Series};

/// Graphs per batch when recording node-state smoothness.
const SMOOTHNESS_GRAPHS: usize = 64;

pub enum Dataset {
    Tabular(FeatureMatrix),
    Graph(GraphDataset),
    Text(TextCorpus),
}

pub fn load_data(spec: &DataSpec) -> Result<Dataset> {
    Ok(match spec {
        DataSpec::Csv { path } => Dataset::Tabular(read_feature_csv(path)?),
        DataSpec::GraphJsonl { path } => Dataset::Graph(load_graph_dataset(path)?),
        DataSpec::Text { path } => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Dataset::Text(tokenize_chars(&text)?)
        }
        DataSpec::SynthRegression { n, d, noise, seed } => Dataset::Tabular(synth_regression(*n, *d, *noise, *seed)?),
        DataSpec::SynthGraphs {
            count,
            min_nodes,
            max_nodes,
            seed,
        } => Dataset::Graph(synth_graphs(*count, (*min_nodes, *max_nodes), *seed)?),
        DataSpec::SynthText { bytes, seed } => Dataset::Text(tokenize_chars(&synth_text(*bytes, *seed))?),
    })
}

/// Outcome of one fold (or one seed of a language-model run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub fold: Option<usize>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Curve rows written.
    pub records: usize,
    pub diverged: bool,
}

impl RunRecord {
    /// File stem of the curve CSV.
    pub fn name(&self) -> String {
        match self.fold {
            Some(f) => format!("seed{}_fold{f}", self.seed),
            None => format!("seed{}", self.seed),
        }
    }
}

/// Everything in here is derived from the curve CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub metric: String,
    pub runs: Vec<RunRecord>,
    pub mean_best_val: Option<f64>,
    /// Sample standard deviation; 0 for a single run.
    pub std_best_val: Option<f64>,
    pub diverged: bool,
}

impl Summary {
    pub fn new(task: Task, metric: String, runs: Vec<RunRecord>) -> Self {
        let best: Vec<f64> = runs.iter().filter_map(|r| r.best_val).collect();
        let (mean, std) = mean_std(&best);
        let diverged = runs.iter().any(|r| r.diverged);
        Self {
            task,
            metric,
            runs,
            mean_best_val: mean,
            std_best_val: std,
            diverged,
        }
    }
}

/// Mean and sample standard deviation, summed in order.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluations {
    /// Block evaluations summed over runs.
    pub total: usize,
    pub per_run: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: Summary,
    pub params: ParamReport,
    pub evaluations: Evaluations,
    pub curves: Vec<LearningCurve>,
    pub divergence: Vec<String>,
}

struct JobResult {
    record: RunRecord,
    outcome: RunOutcome,
    smoothness: Option<SmoothnessReport>,
    checkpoint: Option<Checkpoint>,
}

struct Job {
    seed: u64,
    fold: Option<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Parameter report of the model the config describes.
pub fn model_params(cfg: &ExperimentConfig, data: &Dataset) -> Result<ParamReport> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(match data {
        Dataset::Tabular(m) => {
            let model = TabularModel::new(&mut store, m.cols, &cfg.model, cfg.depth, &mut rng)?;
            count_params(&store, &model)
        }
        Dataset::Graph(g) => {
            let model = GraphModel::new(&mut store, g.node_width(), g.descriptor_width(), &cfg.model, cfg.depth, &mut rng)?;
            count_params(&store, &model)
        }
        Dataset::Text(c) => {
            let model = LanguageModel::new(&mut store, c.vocab_size(), &cfg.model, cfg.depth, &mut rng)?;
            count_params(&store, &model)
        }
    })
}

fn regression_job(cfg: &ExperimentConfig, data: &Dataset, job: &Job) -> Result<JobResult> {
    let fold_seed = job.seed.wrapping_add(job.fold.unwrap_or(0) as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
    let mut store = ParamStore::new();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: fold_seed,
        optimizer: cfg.optimizer,
        clip_grad: cfg.clip(),
    };
    let (outcome, smoothness) = match data {
        Dataset::Tabular(raw) => {
            let fitted = PreprocessStats::fit(raw, &job.train)?.apply(raw)?;
            let model = TabularModel::new(&mut store, fitted.cols, &cfg.model, cfg.depth, &mut rng)?;
            (train_run(&model, &mut store, &fitted, &job.train, &job.test, &opts)?, None)
        }
        Dataset::Graph(raw) => {
            let mut fitted = raw.clone();
            if let Some(f) = &raw.features {
                fitted.features = Some(PreprocessStats::fit(f, &job.train)?.apply(f)?);
            }
            let model = GraphModel::new(&mut store, fitted.node_width(), fitted.descriptor_width(), &cfg.model, cfg.depth, &mut rng)?;
            let outcome = train_run(&model, &mut store, &fitted, &job.train, &job.test, &opts)?;
            let smoothness = if outcome.divergence.is_none() {
                let rows = &job.test[..job.test.len().min(SMOOTHNESS_GRAPHS)];
                let mut tape = Tape::new();
                let trace = model.trace(&mut tape, &store, &fitted, rows)?;
                let states: Vec<_> = trace.trajectory.states.iter().map(|&v| tape.value(v)).collect();
                Some(smoothness_report(&states, &trace.batch.topology.edges)?)
            } else {
                None
            };
            (outcome, smoothness)
        }
        Dataset::Text(_) => unreachable!("text runs use lm_job"),
    };
    Ok(finish(job, outcome, smoothness, None))
}

fn lm_job(cfg: &ExperimentConfig, corpus: &TextCorpus, job: &Job) -> Result<JobResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut store = ParamStore::new();
    let model = LanguageModel::new(&mut store, corpus.vocab_size(), &cfg.model, cfg.depth, &mut rng)?;
    let opts = LmOptions {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        seq_len: cfg.model.context,
        eval_every: cfg.eval_every,
        eval_batches: cfg.eval_batches,
        seed: job.seed,
        optimizer: cfg.optimizer,
        clip_grad: cfg.clip(),
    };
    let outcome = train_lm(&model, &mut store, corpus, &opts)?;
    let checkpoint = Checkpoint {
        model: cfg.model.clone(),
        depth: cfg.depth,
        vocab: corpus.vocab.clone(),
        params: store.export(),
    };
    Ok(finish(job, outcome, None, Some(checkpoint)))
}

fn finish(job: &Job, outcome: RunOutcome, smoothness: Option<SmoothnessReport>, checkpoint: Option<Checkpoint>) -> JobResult {
    let record = RunRecord {
        seed: job.seed,
        fold: job.fold,
        best_val: outcome.curve.best_val(),
        best_epoch: outcome.curve.best_epoch(),
        records: outcome.curve.len(),
        diverged: outcome.divergence.is_some(),
    };
    JobResult {
        record,
        outcome,
        smoothness,
        checkpoint,
    }
}

fn jobs(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<Job>> {
    let n = match data {
        Dataset::Tabular(m) => m.rows,
        Dataset::Graph(g) => g.len(),
        Dataset::Text(_) => {
            return Ok(cfg
                .seeds
                .iter()
                .map(|&seed| Job {
                    seed,
                    fold: None,
                    train: Vec::new(),
                    test: Vec::new(),
                })
                .collect())
        }
    };
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let split = kfold_split(n, cfg.folds, seed)?;
        for (i, fold) in split.folds.into_iter().enumerate() {
            out.push(Job {
                seed,
                fold: Some(i),
                train: fold.train,
                test: fold.test,
            });
        }
    }
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(score_core::Error::from)?;
    text.push('\n');
    write(path, text)
}

/// Validates, trains every fold and writes the artifacts into `out`.
///
/// Folds run on the current rayon pool. The returned artifacts report
/// divergence instead of failing.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    let params = model_params(cfg, &data)?;
    let jobs = jobs(cfg, &data)?;
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|job| match &data {
            Dataset::Text(corpus) => lm_job(cfg, corpus, job),
            _ => regression_job(cfg, &data, job),
        })
        .collect::<Result<_>>()?;

    create_dir(&out.join("curves"))?;
    create_dir(&out.join("plots"))?;
    let mut resolved = cfg.clone();
    resolved.output_dir = out.to_path_buf();
    write(&out.join("config.json"), resolved.to_json() + "\n")?;
    write_json(&out.join("params.json"), &params)?;

    let metric = results
        .first()
        .map(|r| r.outcome.curve.metric.clone())
        .unwrap_or_else(|| "rmse".into());
    let mut records = Vec::new();
    let mut curves = Vec::new();
    let mut divergence = Vec::new();
    let mut per_run = Vec::new();
    let mut smoothness = Vec::new();
    let mut checkpoint = None;
    for r in results {
        let name = r.record.name();
        let path = out.join("curves").join(format!("{name}.csv"));
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        r.outcome.curve.write_csv(file)?;
        log::info!("{name}: best {metric} {:?} over {} records", r.record.best_val, r.record.records);
        if let Some(msg) = &r.outcome.divergence {
            log::warn!("{name} diverged: {msg}");
            divergence.push(format!("{name}: {msg}"));
        }
        if let Some(s) = r.smoothness {
            smoothness.push((name, s));
        }
        if checkpoint.is_none() {
            checkpoint = r.checkpoint;
        }
        per_run.push(r.outcome.block_evaluations);
        curves.push(r.outcome.curve);
        records.push(r.record);
    }
    if !smoothness.is_empty() {
        let dir = out.join("smoothness");
        create_dir(&dir)?;
        for (name, report) in &smoothness {
            write_json(&dir.join(format!("{name}.json")), report)?;
        }
    }
    if let Some(ck) = &checkpoint {
        write_json(&out.join("checkpoint.json"), ck)?;
    }
    let evaluations = Evaluations {
        total: per_run.iter().sum(),
        per_run,
    };
    write_json(&out.join("evaluations.json"), &evaluations)?;
    let summary = Summary::new(cfg.task, metric.clone(), records);
    write_json(&out.join("summary.json"), &summary)?;

    let series: Vec<Series> = summary
        .runs
        .iter()
        .zip(&curves)
        .filter(|(_, c)| !c.is_empty())
        .map(|(r, c)| Series::from_curve(r.name(), c))
        .collect();
    if !series.is_empty() {
        let x_label = if cfg.task == Task::LanguageModel { "iteration" } else { "epoch" };
        let svg = render_svg(&series, x_label, &format!("validation {metric}"))?;
        write(&out.join("plots").join("val_curves.svg"), svg)?;
    }
    Ok(RunArtifacts {
        dir: out.to_path_buf(),
        summary,
        params,
        evaluations,
        curves,
        divergence,
    })
}
