//! The `analyze` subcommand: parameter accounting, node-state smoothness
//! at initialization and time-warp fits between two learning curves.

use std::fs::File;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use score_core::analysis::{smoothness_report, time_warp_fit, ParamComparison, ParamReport, SmoothnessReport, WarpFit};
use score_core::diffcore::{ParamStore, Tape};
use score_core::dynamics::Wiring;
use score_core::models::GraphModel;
use score_core::training::LearningCurve;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{create_dir, load_data, model_params, write_json, Dataset};

const SMOOTHNESS_GRAPHS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamAnalysis {
    /// The configured model.
    pub config: ParamReport,
    /// Shared-block versus distinct-block models with otherwise equal settings.
    pub comparison: ParamComparison,
}

#[derive(Clone, Debug)]
pub struct AnalysisReport {
    pub params: ParamAnalysis,
    pub smoothness: Option<SmoothnessReport>,
    pub warp: Option<WarpFit>,
}

/// Curves to compare with a time-warp fit.
pub struct WarpInputs<'a> {
    pub native: &'a Path,
    pub score: &'a Path,
    pub metric: &'a str,
}

fn read_curve(path: &Path, metric: &str) -> Result<LearningCurve> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(LearningCurve::read_csv(file, metric)?)
}

pub fn analyze(cfg: &ExperimentConfig, out: &Path, warp: Option<WarpInputs<'_>>) -> Result<AnalysisReport> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    let variant = |wiring| {
        let mut c = cfg.clone();
        c.depth.wiring = wiring;
        c.depth = c.depth.normalized();
        c
    };
    let params = ParamAnalysis {
        config: model_params(cfg, &data)?,
        comparison: ParamComparison::new(model_params(&variant(Wiring::Score), &data)?, model_params(&variant(Wiring::Base), &data)?),
    };
    let smoothness = match &data {
        Dataset::Graph(g) => {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[0]);
            let model = GraphModel::new(&mut store, g.node_width(), g.descriptor_width(), &cfg.model, cfg.depth, &mut rng)?;
            let rows: Vec<usize> = (0..g.len().min(SMOOTHNESS_GRAPHS)).collect();
            let mut tape = Tape::new();
            let trace = model.trace(&mut tape, &store, g, &rows)?;
            let states: Vec<_> = trace.trajectory.states.iter().map(|&v| tape.value(v)).collect();
            Some(smoothness_report(&states, &trace.batch.topology.edges)?)
        }
        _ => None,
    };
    let warp = match warp {
        Some(w) => Some(time_warp_fit(&read_curve(w.native, w.metric)?, &read_curve(w.score, w.metric)?)?),
        None => None,
    };

    create_dir(out)?;
    write_json(&out.join("params.json"), &params)?;
    if let Some(s) = &smoothness {
        write_json(&out.join("smoothness.json"), s)?;
    }
    if let Some(w) = &warp {
        write_json(&out.join("warp.json"), w)?;
    }
    Ok(AnalysisReport { params, smoothness, warp })
}
