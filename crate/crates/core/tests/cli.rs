use std::path::Path;
use std::process::{Command, Output};

fn levyhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyhom"))
        .args(args)
        .env_remove("LEVYHOM_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const P1: &str = r#"{
  "case": "p1", "alpha": 0.5, "gamma": 3,
  "lambda": {"file": "lambda.txt"}, "mu": [1, 3],
  "eps": [0.5, 0.25], "half_width": 1, "cells_per_eps": 8,
  "f": {"bump": {"radius": 0.5, "amplitude": 1}}
}"#;

fn p1_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "lambda.txt", "# lambda = 1/mu\n1 0.3333333333333333\n");
    write(dir.path(), "p1.json", P1);
    dir
}

#[test]
fn effective_prints_the_closed_form() {
    let dir = p1_dir();
    let cfg = dir.path().join("p1.json");
    let out = dir.path().join("out");
    let o = levyhom(&["effective", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("lambda_eff = 0.8"), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("effective.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["lambda_eff"], 0.8);
    assert_eq!(report["config"]["case"], "p1");
    // the echoed config carries the resolved path
    let echoed = report["config"]["lambda"]["file"].as_str().unwrap();
    assert!(Path::new(echoed).is_absolute());
}

#[test]
fn validate_names_the_offending_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"case": "p1", "alpha": 0.5, "gamma": 3, "lambda": [1, 1, 5, 1], "mu": [1, 1, 1, 1]}"#,
    );
    let o = levyhom(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lambda cell 2"), "{err}");
    let report: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(report["kind"], "config");
    // nothing written
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn validate_accepts_a_good_config_without_writing() {
    let dir = p1_dir();
    let cfg = dir.path().join("p1.json");
    let before = std::fs::read_dir(dir.path()).unwrap().count();
    let o = levyhom(&["validate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("ok:"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), before);
}

#[test]
fn symmetric_cell_problem_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sym.json",
        r#"{"case": "p2", "alpha": 0.5, "gamma": 3,
            "table": {"cosine_difference": {"mean": 2, "amplitude": 1, "n": 16}}}"#,
    );
    let out = dir.path().join("out");
    let o = levyhom(&["cell", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{o:?}");
    assert!(o.stdout.is_empty());
    let p0 = std::fs::read_to_string(out.join("p0.txt")).unwrap();
    let values: Vec<f64> = p0.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(values.len(), 16);
    assert!(values.iter().all(|v| (v - 1.0).abs() < 1e-8));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("cell.json")).unwrap()).unwrap();
    let l = report["result"]["lambda_eff"].as_f64().unwrap();
    assert!((l - 2.0).abs() < 1e-8, "{l}");
}

#[test]
fn sweep_outputs_are_byte_identical() {
    let dir = p1_dir();
    let cfg = dir.path().join("p1.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = levyhom(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(o.status.success(), "{o:?}");
    }
    for name in ["sweep.csv", "sweep.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    let csv = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "eps,seed,rel_l2_error,gamma_value,seminorm,iters,residual,wall_ms");
    assert_eq!(lines.count(), 2);
}

#[test]
fn solve_writes_solution_and_report() {
    let dir = p1_dir();
    let cfg = dir.path().join("p1.json");
    let out = dir.path().join("out");
    let o = levyhom(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let u = std::fs::read_to_string(out.join("u.txt")).unwrap();
    let values: Vec<f64> = u.split_whitespace().map(|t| t.parse().unwrap()).collect();
    // h = 0.5 / 8 on [-1, 1)
    assert_eq!(values.len(), 32);
    // a positive source gives a nonpositive solution of (L - m) u = f
    assert!(values.iter().all(|v| *v <= 0.0));
    assert!(out.join("solve.json").exists());
}

#[test]
fn gamma_and_ergodic_run() {
    let dir = p1_dir();
    let cfg = dir.path().join("p1.json");
    let out = dir.path().join("out");
    let o = levyhom(&["gamma", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("F_eff(u0)"));

    let q = write(
        dir.path(),
        "q1.json",
        r#"{"case": "q1", "alpha": 0.5, "gamma": 3, "coupled": true,
            "lambda_field": {"checkerboard": {"states": [1, 0.3333333333333333]}},
            "mu_field": {"checkerboard": {"states": [1, 3]}},
            "eps": [0.5, 0.125], "seeds": [1,2,3,4,5,6,7,8,9,10]}"#,
    );
    let o = levyhom(&["ergodic", "--config", &q, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ergodic.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["target"], 4.0);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = levyhom(&["effective", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let unknown = write(dir.path(), "u.json", r#"{"case": "p1", "alpha": 0.5, "gamma": 3, "colour": 1}"#);
    let o = levyhom(&["effective", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(2));

    let nofile = write(
        dir.path(),
        "f.json",
        r#"{"case": "p1", "alpha": 0.5, "gamma": 3, "lambda": {"file": "absent.txt"}, "mu": [1]}"#,
    );
    let o = levyhom(&["effective", "--config", &nofile]);
    assert_eq!(o.status.code(), Some(4));

    let o = levyhom(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = levyhom(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Exit codes"));
}

#[test]
fn numeric_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"case": "nonsym", "alpha": 0.5, "gamma": 3,
            "table": {"sine_sum": {"c": 2, "a": 0.5, "b": 0.25, "n": 16}},
            "cell": {"max_iter": 2, "tol": 1e-14}}"#,
    );
    let o = levyhom(&["cell", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        r#"{"case": "q1", "alpha": 0.5, "gamma": 3, "seeds": [1, 2],
            "lambda_field": {"checkerboard": {"states": [1, 2]}},
            "mu_field": {"checkerboard": {"states": [1, 3]}},
            "eps": [0.5], "half_width": 1, "cells_per_eps": 8,
            "f": {"gaussian": {"width": 0.3, "amplitude": 1}}}"#,
    );
    let out = dir.path().join("out");
    let o = levyhom(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0.5,9,"));
}
