use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "bm": {"n_paths": 300, "step_dt": 0.001, "time_grid": [0.02, 0.08, 0.3], "seed": 0, "max_reflect_attempts": 10000},
  "n_iterations": 4
}"#;

fn inbo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inbo"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_category(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"].as_str().expect("category").to_string()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

#[test]
fn validate_reports_bundled_problem_sizes() {
    let dir = workspace();
    for (name, n, m) in [
        ("ushape", 285, 20),
        ("bitten_torus", 600, 19),
        ("sea", 485, 42),
    ] {
        let v = stdout_json(&inbo(&["validate", "--problem", name], dir.path()));
        assert_eq!(v["grid_points"], n);
        assert_eq!(v["inducing_points"], m);
        assert_eq!(v["tied_maxima"], 1);
    }
}

#[test]
fn simulate_fills_the_cache_once() {
    let dir = workspace();
    let args = [
        "simulate",
        "--problem",
        "ushape",
        "--config",
        "small.json",
        "--cache",
        "cache",
    ];
    let v = stdout_json(&inbo(&args, dir.path()));
    assert_eq!(v["inducing_points"], 20);
    let files = || std::fs::read_dir(dir.path().join("cache")).unwrap().count();
    assert_eq!(files(), 20);
    stdout_json(&inbo(&args, dir.path()));
    assert_eq!(files(), 20);
}

#[test]
fn run_writes_one_trace() {
    let dir = workspace();
    let args = [
        "run",
        "--problem",
        "ushape",
        "--config",
        "small.json",
        "--method",
        "tra_bo",
        "--seed",
        "4",
        "--out",
        "out",
    ];
    let v = stdout_json(&inbo(&args, dir.path()));
    assert_eq!(v["method"], "tra_bo");
    let text = std::fs::read_to_string(dir.path().join("out/trace_tra_bo_seed4.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("iteration,grid_index,y,best_index,best_value")
    );
    assert_eq!(lines.count(), 3 + 4);
}

#[test]
fn experiment_writes_reports_and_is_reproducible() {
    let dir = workspace();
    let run = |out: &str| {
        let args = [
            "experiment",
            "--problem",
            "ushape",
            "--config",
            "small.json",
            "--seeds",
            "2",
            "--out",
            out,
        ];
        stdout_json(&inbo(&args, dir.path()))
    };
    let v = run("a");
    assert_eq!(v["methods"].as_array().unwrap().len(), 2);
    run("b");
    for file in [
        "report.csv",
        "summary.csv",
        "trace_in_bo_seed1.csv",
        "trace_tra_bo_seed2.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(
            a,
            std::fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let report = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert!(report.starts_with("method,seed,best_value,found_optimum,n_evals_to_optimum\n"));
    assert_eq!(report.lines().count(), 5);
}

#[test]
fn domain_files_are_ingested() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("b.csv"),
        "ring_id,x,y\n0,0,0\n0,2,0\n0,2,2\n0,0,2\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("g.csv"),
        "x,y,value,is_inducing\n0.5,0.5,1,1\n1.5,0.5,2,0\n0.5,1.5,3,1\n1.5,1.5,0,0\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("none.json"), r#"{"n_iterations": 0}"#).unwrap();
    let v = stdout_json(&inbo(
        &[
            "validate",
            "--problem",
            "b.csv,g.csv",
            "--config",
            "none.json",
        ],
        dir.path(),
    ));
    assert_eq!(v["problem"], "g");
    assert_eq!(v["grid_points"], 4);
    assert_eq!(v["true_optimum_index"], 2);

    std::fs::write(
        dir.path().join("out.csv"),
        "x,y,value,is_inducing\n0.5,0.5,1,1\n3.0,0.5,2,0\n",
    )
    .unwrap();
    assert_eq!(
        error_category(&inbo(
            &["validate", "--problem", "b.csv,out.csv"],
            dir.path()
        )),
        "ingestion"
    );
    std::fs::write(
        dir.path().join("bad.csv"),
        "x,y,value,is_inducing\n0.5,zero,1,1\n",
    )
    .unwrap();
    assert_eq!(
        error_category(&inbo(
            &["validate", "--problem", "b.csv,bad.csv"],
            dir.path()
        )),
        "parse"
    );
}

#[test]
fn failures_exit_with_a_category() {
    let dir = workspace();
    std::fs::write(dir.path().join("typo.json"), r#"{"n_iter": 3}"#).unwrap();
    std::fs::write(dir.path().join("neg.json"), r#"{"epsilon": -1}"#).unwrap();
    let cases = [
        (vec!["validate", "--problem", "nowhere"], "input"),
        (vec!["validate", "--problem", "missing.csv,gone.csv"], "io"),
        (
            vec!["validate", "--problem", "ushape", "--config", "typo.json"],
            "parse",
        ),
        (
            vec!["validate", "--problem", "ushape", "--config", "neg.json"],
            "input",
        ),
        (
            vec!["validate", "--problem", "ushape", "--config", "absent.json"],
            "io",
        ),
        (vec!["simulate", "--problem", "ushape"], "input"),
    ];
    for (args, category) in cases {
        assert_eq!(
            error_category(&inbo(&args, dir.path())),
            category,
            "{args:?}"
        );
    }
    let out = inbo(
        &[
            "run",
            "--problem",
            "ushape",
            "--method",
            "nope",
            "--out",
            "x",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
}
