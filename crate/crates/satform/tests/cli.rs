//! End-to-end tests of the `satform` binary: exit codes, artifact layout,
//! and reproducibility of the synth/eval/recover/sweep subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satform"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn synth_is_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&[
            "synth", "--task", "ndvi", "--n", "3", "--size", "16", "--seed", "9",
            "--out", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let names = read_dir_sorted(&a);
    assert_eq!(names, read_dir_sorted(&b));
    assert!(names.contains(&"manifest.json".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".satf")).count(), 3);
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical synth runs"
        );
    }
}

#[test]
fn unknown_task_exits_2_and_lists_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth", "--task", "thermal", "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("unknown task"), "stderr: {err}");
    assert!(err.contains("ndvi"), "should list known tasks: {err}");
}

#[test]
fn malformed_formula_exits_2_with_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth", "--formula", "(B1 +", "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("offset"), "stderr: {}", stderr_of(&out));
}

#[test]
fn recover_missing_manifest_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&[
        "recover", "--data", empty.to_str().unwrap(),
        "--out", tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dry_run_prints_config_and_touches_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let out = run(&[
        "recover", "--dry-run", "--seed", "11", "--beam-width", "5",
        "--data", tmp.path().join("nonexistent").to_str().unwrap(),
        "--out", run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let cfg: serde_json::Value = serde_json::from_str(&stdout_of(&out)).expect("valid JSON");
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["beam_width"], 5);
    assert!(!run_dir.exists(), "--dry-run must not create the run directory");
}

#[test]
fn eval_reference_formula_fits_its_own_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let formula = "((B2 - B1) + 0.76) * 76.58";
    let out = run(&[
        "synth", "--formula", formula, "--n", "2", "--size", "16", "--seed", "3",
        "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let metrics_dir = tmp.path().join("metrics");
    let out = run(&[
        "eval", "--data", data.to_str().unwrap(), "--formula", formula,
        "--out", metrics_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "task,r2,mae,rmse,nodes,runtime_s");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "formula");
    let mae: f64 = row[2].parse().unwrap();
    assert!(mae <= 1e-6, "MAE {mae} too large for the generating formula");
    assert_eq!(row[4], "7");
    let written = fs::read_to_string(metrics_dir.join("metrics.csv")).unwrap();
    assert!(written.contains("task,r2,mae,rmse,nodes,runtime_s"));
}

#[test]
fn eval_formula_wins_over_task_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = run(&[
        "synth", "--task", "ndvi", "--n", "2", "--size", "16", "--seed", "4",
        "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let out = run(&[
        "eval", "--data", data.to_str().unwrap(),
        "--formula", "(B4 - B3) / (B4 + B3)", "--task", "ndvi",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("--formula wins"), "stderr: {}", stderr_of(&out));
    // the formula IS the ndvi oracle, so the fit is exact
    let text = stdout_of(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().unwrap() <= 1e-6);
}

#[test]
fn sweep_rejects_out_of_range_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep", "--task", "ndvi", "--ratios", "0.0,0.5",
        "--out", tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("(0, 1]"), "stderr: {}", stderr_of(&out));
}

#[test]
fn recover_writes_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = run(&[
        "synth", "--task", "ndvi", "--n", "4", "--size", "32", "--seed", "5",
        "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    // a reduced schedule keeps this test quick; recovery quality is covered
    // by the acceptance suite
    let cfg = tmp.path().join("small.json");
    fs::write(&cfg, r#"{"stage1_epochs": 4, "stage2_epochs": 12, "beam_width": 4}"#).unwrap();
    let run_dir = tmp.path().join("run");
    let out = run(&[
        "recover", "--data", data.to_str().unwrap(), "--out", run_dir.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for artifact in [
        "expression.txt", "metrics.csv", "candidates.tsv",
        "loss_trace.csv", "config.json", "model.satw",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let expr_text = fs::read_to_string(run_dir.join("expression.txt")).unwrap();
    satform_core::expr::parse(expr_text.trim()).expect("recovered expression parses");
    assert!(stdout_of(&out).contains("recovered:"));
}
