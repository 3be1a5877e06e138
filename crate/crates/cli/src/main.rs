use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use score_core::dynamics::Wiring;
use score_lab::{analyze, generate, plot_files, run, sweep, thread_count, Axis, Checkpoint, CliError, ExperimentConfig, Task, WarpInputs};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "score-lab", version, about = "Train and compare recurrent-depth models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed replacing `seeds` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every fold and write curves, reports and plots.
    Run(Common),
    /// One run per axis value plus a comparison table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Wiring compared against on the step axis.
        #[arg(long, default_value = "base", value_parser = parse_wiring)]
        baseline: Wiring,
    },
    /// Sample text from the checkpoint of a language-model run.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to `checkpoint.json` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 200)]
        length: usize,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
    },
    /// Parameter counts, smoothness at initialization and time-warp fits.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Curve CSV of the stacked model.
        #[arg(long, requires = "score")]
        native: Option<PathBuf>,
        /// Curve CSV of the shared-block model.
        #[arg(long, requires = "native")]
        score: Option<PathBuf>,
        #[arg(long, default_value = "rmse")]
        metric: String,
    },
    /// Redraw the validation curves of a finished run.
    Plot(Common),
}

fn parse_wiring(s: &str) -> Result<Wiring, String> {
    Wiring::ALL
        .into_iter()
        .find(|w| w.name() == s)
        .ok_or_else(|| format!("unknown wiring `{s}`"))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn curve_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Returns whether any run diverged.
fn execute(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Run(common) => {
            let (cfg, out) = load(&common)?;
            let art = run(&cfg, &out)?;
            let s = &art.summary;
            if let (Some(m), Some(sd)) = (s.mean_best_val, s.std_best_val) {
                say!("best validation {}: {m:.6} ± {sd:.6} over {} runs", s.metric, s.runs.len());
            }
            for d in &art.divergence {
                eprintln!("diverged: {d}");
            }
            say!("artifacts in {}", art.dir.display());
            Ok(s.diverged)
        }
        Command::Sweep { common, axis, baseline } => {
            let (cfg, out) = load(&common)?;
            let report = sweep(&cfg, axis, baseline, &out)?;
            let table = std::fs::read_to_string(&report.table).map_err(|e| CliError::io(&report.table, e))?;
            say!("{}", table.trim_end());
            Ok(report.diverged)
        }
        Command::Generate {
            common,
            checkpoint,
            prompt,
            length,
            temperature,
        } => {
            let (cfg, out) = load(&common)?;
            let path = checkpoint.unwrap_or_else(|| out.join("checkpoint.json"));
            let ck = Checkpoint::load(&path)?;
            let seed = cfg.seeds[0];
            say!("{}", generate(&ck, &prompt, length, temperature, seed)?);
            Ok(false)
        }
        Command::Analyze {
            common,
            native,
            score,
            metric,
        } => {
            let (cfg, out) = load(&common)?;
            let warp = match (&native, &score) {
                (Some(n), Some(s)) => Some(WarpInputs {
                    native: n,
                    score: s,
                    metric: &metric,
                }),
                _ => None,
            };
            let dir = if common.out.is_some() { out } else { out.join("analysis") };
            let report = analyze(&cfg, &dir, warp)?;
            let p = &report.params;
            say!(
                "parameters: {} total, {} in blocks; stacked/shared ratio {:.3}",
                p.config.total,
                p.config.component("blocks"),
                p.comparison.ratio
            );
            if let Some(w) = &report.warp {
                say!("time-warp factor {:.3} (residual {:.3e})", w.factor, w.residual);
            }
            say!("reports in {}", dir.display());
            Ok(false)
        }
        Command::Plot(common) => {
            let (cfg, out) = load(&common)?;
            let files = curve_files(&out.join("curves"))?;
            let metric = if cfg.task == Task::LanguageModel { "cross_entropy" } else { "rmse" };
            let x_label = if cfg.task == Task::LanguageModel { "iteration" } else { "epoch" };
            let dir = out.join("plots");
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let path = dir.join("val_curves.svg");
            plot_files(&files, metric, x_label, &path)?;
            say!("wrote {}", path.display());
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
