//! Experiment runner for recurrent-depth models.
//!
//! Each experiment is one JSON [`ExperimentConfig`]. [`run`] trains every
//! fold and writes curves, reports, a summary and plots into the output
//! directory; [`sweep`] repeats that across step counts, integrators or
//! wirings and tabulates the results.

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod sweep;

pub use analyze::{analyze, AnalysisReport, WarpInputs};
pub use checkpoint::{generate, Checkpoint};
pub use config::{DataSpec, ExperimentConfig, Task};
pub use error::{CliError, Result};
pub use experiment::{run, RunArtifacts, RunRecord, Summary};
pub use plot::{plot_files, render_svg, Series};
pub use sweep::{format_dt, sweep, Axis, SweepReport};

/// Environment variable capping concurrent runs.
pub const THREADS_ENV: &str = "SCORE_LAB_THREADS";

/// Worker count from [`THREADS_ENV`]; 1 when unset or invalid.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
