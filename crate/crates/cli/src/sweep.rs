//! The `sweep` subcommand: one run per axis value plus a comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use score_core::dynamics::{IntegratorKind, Wiring};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{create_dir, run, write_json, RunArtifacts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Step counts 2 through 7, each against a stacked model of equal depth.
    #[value(alias = "k")]
    Steps,
    /// The four integrators.
    Integrator,
    /// The five wirings.
    Wiring,
}

pub const STEP_RANGE: std::ops::RangeInclusive<usize> = 2..=7;

/// One finished run of the sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub config: ExperimentConfig,
    pub artifacts: RunArtifacts,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
    pub table: PathBuf,
    pub diverged: bool,
}

/// Full-precision record of one point, written next to the table.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PointRecord {
    label: String,
    mean_best_val: Option<f64>,
    std_best_val: Option<f64>,
    block_params: usize,
    total_params: usize,
    block_evaluations: usize,
    diverged: bool,
}

fn points(base: &ExperimentConfig, axis: Axis, baseline: Wiring) -> Vec<(String, ExperimentConfig)> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c.depth = c.depth.normalized();
        c
    };
    match axis {
        Axis::Steps => STEP_RANGE
            .flat_map(|k| {
                [
                    (format!("k{k}_score"), with(&|c| c.depth.steps = k)),
                    (
                        format!("k{k}_native"),
                        with(&|c| {
                            c.depth.steps = k;
                            c.depth.wiring = baseline;
                        }),
                    ),
                ]
            })
            .collect(),
        Axis::Integrator => IntegratorKind::ALL
            .iter()
            .map(|&i| (i.name().to_string(), with(&|c| c.depth.integrator = i)))
            .collect(),
        Axis::Wiring => Wiring::ALL.iter().map(|&w| (w.name().to_string(), with(&|c| c.depth.wiring = w))).collect(),
    }
}

/// Step size in the table: rounded up to three decimals.
pub fn format_dt(dt: f64) -> String {
    let v = (dt * 1000.0 - 1e-9).ceil() / 1000.0;
    format!("{v}")
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "nan".into())
}

/// Runs every point of `axis` under `out`, then writes `comparison.csv`.
///
/// For the step axis each `K` is run twice: with the configured wiring
/// and with `baseline`. Points are dispatched on the current rayon pool.
pub fn sweep(base: &ExperimentConfig, axis: Axis, baseline: Wiring, out: &Path) -> Result<SweepReport> {
    let configs = points(base, axis, baseline);
    for (label, cfg) in &configs {
        cfg.validate().map_err(|e| CliError::config(format!("sweep point {label}: {e}")))?;
    }
    let artifacts: Vec<RunArtifacts> = configs
        .par_iter()
        .map(|(label, cfg)| run(cfg, &out.join(label)))
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = configs
        .into_iter()
        .zip(artifacts)
        .map(|((label, config), artifacts)| SweepPoint { label, config, artifacts })
        .collect();

    create_dir(out)?;
    let mut table = String::new();
    match axis {
        Axis::Steps => {
            table.push_str("steps,dt,score,native,diff,improvement\n");
            for pair in points.chunks(2) {
                let (score, native) = (&pair[0], &pair[1]);
                let s = score.artifacts.summary.mean_best_val;
                let n = native.artifacts.summary.mean_best_val;
                let (diff, improvement) = match (s, n) {
                    (Some(s), Some(n)) => (format!("{:+.4}", n - s), format!("{:.1}%", 100.0 * (n - s) / n)),
                    _ => ("nan".into(), "nan".into()),
                };
                let _ = writeln!(
                    table,
                    "{},{},{},{},{diff},{improvement}",
                    score.config.depth.steps,
                    format_dt(score.config.depth.dt()),
                    fmt(s),
                    fmt(n)
                );
            }
        }
        Axis::Integrator | Axis::Wiring => {
            let name = if axis == Axis::Wiring { "wiring" } else { "integrator" };
            let _ = writeln!(table, "{name},mean,std,mean_std,block_params,block_evaluations,diverged");
            for p in &points {
                let s = &p.artifacts.summary;
                let _ = writeln!(
                    table,
                    "{},{},{},{} ± {},{},{},{}",
                    p.label,
                    fmt(s.mean_best_val),
                    fmt(s.std_best_val),
                    fmt(s.mean_best_val),
                    fmt(s.std_best_val),
                    p.artifacts.params.component("blocks"),
                    p.artifacts.evaluations.total,
                    s.diverged
                );
            }
        }
    }
    let table_path = out.join("comparison.csv");
    fs::write(&table_path, table).map_err(|e| CliError::io(&table_path, e))?;
    let records: Vec<PointRecord> = points
        .iter()
        .map(|p| PointRecord {
            label: p.label.clone(),
            mean_best_val: p.artifacts.summary.mean_best_val,
            std_best_val: p.artifacts.summary.std_best_val,
            block_params: p.artifacts.params.component("blocks"),
            total_params: p.artifacts.params.total,
            block_evaluations: p.artifacts.evaluations.total,
            diverged: p.artifacts.summary.diverged,
        })
        .collect();
    write_json(&out.join("sweep.json"), &records)?;
    let diverged = points.iter().any(|p| p.artifacts.summary.diverged);
    Ok(SweepReport {
        axis,
        points,
        table: table_path,
        diverged,
    })
}
