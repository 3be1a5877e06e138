//! End-to-end checks of the `score-lab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_score-lab");

fn tabular(out: &Path) -> Value {
    json!({
        "task": "regression_tabular",
        "model": {"width": 8, "head": {"hidden": [8]}},
        "depth": {"wiring": "score", "steps": 2},
        "epochs": 3,
        "folds": 2,
        "batch_size": 16,
        "data": {"source": "synth_regression", "n": 60, "d": 3, "noise": 0.1, "seed": 1},
        "output_dir": out,
    })
}

fn graph(out: &Path) -> Value {
    json!({
        "task": "regression_graph",
        "model": {"width": 8, "head": {"hidden": [8]}},
        "depth": {"wiring": "score", "steps": 2},
        "epochs": 2,
        "folds": 2,
        "batch_size": 8,
        "data": {"source": "synth_graphs", "count": 24, "min_nodes": 3, "max_nodes": 5, "seed": 2},
        "output_dir": out,
    })
}

fn text(out: &Path) -> Value {
    json!({
        "task": "language_model",
        "model": {"width": 8, "heads": 2, "context": 8},
        "depth": {"wiring": "score", "steps": 2},
        "iterations": 4,
        "eval_every": 2,
        "eval_batches": 1,
        "batch_size": 2,
        "data": {"source": "synth_text", "bytes": 3000, "seed": 3},
        "output_dir": out,
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn score_lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("SCORE_LAB_THREADS", "1").output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_ok(config: &Path) {
    let out = score_lab(&["run", "--config", arg(config)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn val_column(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == "val_metric").unwrap();
    r.records().map(|row| row.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn run_writes_artifacts_derivable_from_the_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "exp.json", &tabular(&out));
    run_ok(&config);

    for file in ["config.json", "params.json", "evaluations.json", "summary.json", "plots/val_curves.svg"] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let summary = read_json(&out.join("summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    let mut best = Vec::new();
    for run in runs {
        let name = format!("seed{}_fold{}", run["seed"], run["fold"]);
        let vals = val_column(&out.join("curves").join(format!("{name}.csv")));
        assert_eq!(vals.len(), 3);
        assert_eq!(run["records"], 3);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(run["best_val"].as_f64().unwrap(), min);
        let epoch = run["best_epoch"].as_u64().unwrap() as usize;
        assert_eq!(vals[epoch - 1], min);
        best.push(min);
    }
    let mean = best.iter().sum::<f64>() / 2.0;
    let std = (best.iter().map(|b| (b - mean).powi(2)).sum::<f64>()).sqrt();
    assert!((summary["mean_best_val"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((summary["std_best_val"].as_f64().unwrap() - std).abs() < 1e-12);
    assert_eq!(summary["diverged"], false);

    let svg = fs::read_to_string(out.join("plots/val_curves.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
}

#[test]
fn copied_config_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("first");
    run_ok(&write_config(dir.path(), "exp.json", &graph(&out)));

    let copy = dir.path().join("copy.json");
    fs::copy(out.join("config.json"), &copy).unwrap();
    let again = dir.path().join("second");
    let res = score_lab(&["run", "--config", arg(&copy), "--out", arg(&again)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read(out.join("summary.json")).unwrap(),
        fs::read(again.join("summary.json")).unwrap()
    );
    assert!(out.join("smoothness").is_dir());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let summaries: Vec<Vec<u8>> = ["1", "2"]
        .iter()
        .map(|threads| {
            let out = dir.path().join(format!("t{threads}"));
            let config = write_config(dir.path(), &format!("t{threads}.json"), &tabular(&out));
            let res = Command::new(BIN)
                .args(["run", "--config", arg(&config)])
                .env("SCORE_LAB_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(code(&res), 0);
            fs::read(out.join("summary.json")).unwrap()
        })
        .collect();
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn invalid_config_exits_1_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = tabular(&out);
    cfg["model"]["width"] = json!(0);
    let res = score_lab(&["run", "--config", arg(&write_config(dir.path(), "bad.json", &cfg))]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("model.width"));
    assert!(!out.exists());

    let mut cfg = tabular(&out);
    cfg["epoch"] = json!(3);
    let res = score_lab(&["run", "--config", arg(&write_config(dir.path(), "typo.json", &cfg))]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("epoch"));
    assert!(!out.exists());
}

#[test]
fn missing_data_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = tabular(&out);
    cfg["data"] = json!({"source": "csv", "path": "absent.csv"});
    let res = score_lab(&["run", "--config", arg(&write_config(dir.path(), "exp.json", &cfg))]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("data.path"));
    assert!(!out.exists());
}

#[test]
fn unreadable_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let res = score_lab(&["run", "--config", arg(&dir.path().join("nope.json"))]);
    assert_eq!(code(&res), 3);
}

#[test]
fn divergence_exits_2_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = tabular(&out);
    cfg["optimizer"] = json!({"kind": "sgd", "lr": 1e30});
    let res = score_lab(&["run", "--config", arg(&write_config(dir.path(), "exp.json", &cfg))]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("diverged"));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["diverged"], true);
    assert!(out.join("curves/seed0_fold0.csv").is_file());
}

#[test]
fn step_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut cfg = tabular(&out);
    cfg["epochs"] = json!(1);
    let config = write_config(dir.path(), "exp.json", &cfg);
    let res = score_lab(&["sweep", "--config", arg(&config), "--axis", "steps"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "steps,dt,score,native,diff,improvement");
    assert_eq!(lines.len(), 7);
    let dts: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(dts, ["0.5", "0.334", "0.25", "0.2", "0.167", "0.143"]);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        let (s, n): (f64, f64) = (cells[2].parse().unwrap(), cells[3].parse().unwrap());
        let diff: f64 = cells[4].parse().unwrap();
        assert!((diff - (n - s)).abs() <= 1.5e-4, "{line}");
        assert!(cells[5].ends_with('%'));
    }
    assert!(out.join("k4_native/summary.json").is_file());
    let native = read_json(&out.join("k4_native/config.json"));
    assert_eq!(native["depth"]["wiring"], "base");
}

#[test]
fn integrator_and_wiring_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("integrators");
    let mut cfg = graph(&out);
    cfg["epochs"] = json!(1);
    let config = write_config(dir.path(), "exp.json", &cfg);
    let res = score_lab(&["sweep", "--config", arg(&config), "--axis", "integrator"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, ["euler", "heun", "midpoint", "rk4"]);
    let evals: Vec<usize> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(evals[1..].iter().all(|&e| e > evals[0]), "{evals:?}");
    assert_eq!(evals[1], evals[2]);
    assert_eq!(evals[3], 2 * evals[1]);

    let out = dir.path().join("wirings");
    let res = score_lab(&["sweep", "--config", arg(&config), "--axis", "wiring", "--out", arg(&out)]);
    assert_eq!(code(&res), 0);
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["base", "classic", "skip05", "score", "score_skip05"]);
    assert!(table.lines().skip(1).all(|l| l.contains(" ± ")));
}

#[test]
fn shared_block_matches_one_stacked_block_in_size() {
    let dir = tempfile::tempdir().unwrap();
    let report = |name: &str, wiring: &str, steps: usize| {
        let out = dir.path().join(name);
        let mut cfg = graph(&out);
        cfg["depth"] = json!({"wiring": wiring, "steps": steps, "schedule": {"kind": "inverse_k"}});
        let config = write_config(dir.path(), &format!("{name}.json"), &cfg);
        let res = score_lab(&["analyze", "--config", arg(&config), "--out", arg(&out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        assert!(out.join("smoothness.json").is_file());
        read_json(&out.join("params.json"))["config"].clone()
    };
    let shared = report("shared", "score", 4);
    let single = report("single", "base", 1);
    let stacked = report("stacked", "base", 4);
    assert_eq!(shared, single);
    assert_eq!(stacked["components"]["blocks"], 4 * shared["components"]["blocks"].as_u64().unwrap());
}

#[test]
fn analyze_fits_time_warp_between_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = tabular(&out);
    cfg["epochs"] = json!(12);
    let config = write_config(dir.path(), "exp.json", &cfg);
    run_ok(&config);
    let a = out.join("curves/seed0_fold0.csv");
    let b = out.join("curves/seed0_fold1.csv");
    let res = score_lab(&["analyze", "--config", arg(&config), "--native", arg(&a), "--score", arg(&b)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let warp = read_json(&out.join("analysis/warp.json"));
    assert!(warp["factor"].as_f64().unwrap().is_finite());

    let res = score_lab(&["analyze", "--config", arg(&config), "--native", arg(&a), "--score", arg(&dir.path().join("x.csv"))]);
    assert_eq!(code(&res), 3);
}

#[test]
fn plot_redraws_the_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "exp.json", &tabular(&out));
    run_ok(&config);
    let svg_path = out.join("plots/val_curves.svg");
    fs::remove_file(&svg_path).unwrap();
    let res = score_lab(&["plot", "--config", arg(&config)]);
    assert_eq!(code(&res), 0);
    let svg = fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let legend: Vec<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("legend-entry"))
        .map(|n| n.descendants().find(|t| t.has_tag_name("text")).unwrap().text().unwrap())
        .collect();
    assert_eq!(legend, ["seed0_fold0", "seed0_fold1"]);
}

#[test]
fn language_model_checkpoint_and_generation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lm");
    let config = write_config(dir.path(), "exp.json", &text(&out));
    run_ok(&config);
    let vals = val_column(&out.join("curves/seed0.csv"));
    assert_eq!(vals.len(), 3);

    let ck = read_json(&out.join("checkpoint.json"));
    let vocab: Vec<char> = ck["vocab"].as_array().unwrap().iter().map(|c| c.as_str().unwrap().chars().next().unwrap()).collect();
    let prompt: String = vocab.iter().filter(|c| c.is_alphabetic()).take(3).collect();

    let gen = |temperature: &str, seed: &str| {
        let res = score_lab(&[
            "generate", "--config", arg(&config), "--prompt", &prompt, "--length", "20", "--temperature", temperature, "--seed", seed,
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        String::from_utf8(res.stdout).unwrap().strip_suffix('\n').unwrap().to_string()
    };
    let sample = gen("0.8", "5");
    assert!(sample.starts_with(&prompt));
    assert_eq!(sample.chars().count(), prompt.chars().count() + 20);
    assert!(sample.chars().all(|c| vocab.contains(&c)));
    assert_eq!(sample, gen("0.8", "5"));
    assert_eq!(gen("0", "1"), gen("0", "2"));

    let res = score_lab(&["generate", "--config", arg(&config), "--prompt", "☃", "--length", "3"]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("'☃'"));
}

#[test]
fn nothing_is_written_outside_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    fs::create_dir(&work).unwrap();
    let mut cfg = tabular(Path::new("out"));
    cfg["epochs"] = json!(1);
    write_config(&work, "exp.json", &cfg);
    let res = Command::new(BIN)
        .args(["run", "--config", "exp.json"])
        .current_dir(&work)
        .env("SCORE_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    let mut entries: Vec<String> = fs::read_dir(&work).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    entries.sort();
    assert_eq!(entries, ["exp.json", "out"]);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
