use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fxband"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to launch fxband")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn solve_json(name: &str) -> Value {
    let cfg = fixture(name);
    serde_json::from_str(&stdout(&run(&["solve", cfg.to_str().unwrap()]))).unwrap()
}

/// Splits CSV lines, honouring double-quoted fields.
fn split_line(line: &str) -> Vec<String> {
    let mut fields = vec![String::new()];
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                chars.next();
                fields.last_mut().unwrap().push('"');
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(String::new()),
            _ => fields.last_mut().unwrap().push(c),
        }
    }
    fields
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = split_line(lines.next().unwrap());
    let rows = lines.map(split_line).collect();
    (header, rows)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("problem.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn solve_reproduces_reference_restart() {
    let sol = solve_json("table1_t1.json");
    assert!((sol["alpha"].as_f64().unwrap() - 1.212).abs() < 0.005, "{sol}");
    assert!((sol["a"].as_f64().unwrap() - 0.581).abs() < 0.005);
    assert!((sol["b"].as_f64().unwrap() - 2.365).abs() < 0.005);
    assert!(sol["residual_norm"].as_f64().unwrap() < 1e-9);
}

#[test]
fn solve_drift_decrease() {
    let sol = solve_json("table2_drift_down.json");
    for (key, want) in [("a", 0.621), ("b", 2.309), ("alpha", 1.275)] {
        let got = sol[key].as_f64().unwrap();
        assert!((got - want).abs() < 0.005, "{key}: {got} vs {want}");
    }
}

#[test]
fn malformed_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06"#,
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4}, "cost": {"K": 0.5}, "extra": 1}"#,
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4, "kappa": 2}, "cost": {"K": 0.5}}"#,
        r#"{"model": {"mu": 0.1, "sigma": -0.3, "r": 0.06, "rho": 1.4}, "cost": {"K": 0.5}}"#,
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4}, "cost": {"K": 0.5}, "sim": {"n_paths": 0}}"#,
    ];
    for body in cases {
        let cfg = write_config(dir.path(), body);
        let out = run(&["solve", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{body}");
        assert!(out.stdout.is_empty(), "{body}");
        assert!(!out.stderr.is_empty());
    }
    let out = run(&["solve", "/nonexistent/problem.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn curve_pins_theta_outside_band() {
    let sol = solve_json("table1_t1.json");
    let (a, b, theta) = (
        sol["a"].as_f64().unwrap(),
        sol["b"].as_f64().unwrap(),
        sol["theta"].as_f64().unwrap(),
    );
    let cfg = fixture("table1_t1.json");
    let text = stdout(&run(&[
        "curve",
        cfg.to_str().unwrap(),
        "--xmin",
        &format!("{}", a * 0.5),
        "--xmax",
        &format!("{}", b * 1.5),
        "--n",
        "2",
    ]));
    let (header, rows) = parse_csv(&text);
    assert_eq!(header, ["x", "V"]);
    assert_eq!(rows.len(), 2);
    for row in rows {
        let v: f64 = row[1].parse().unwrap();
        assert!((v - theta).abs() < 1e-12);
    }
}

#[test]
fn reaction_raises_the_value_curve() {
    let grid = |name: &str| -> Vec<f64> {
        let cfg = fixture(name);
        let text = stdout(&run(&["curve", cfg.to_str().unwrap(), "--xmin", "0.8", "--xmax", "2.0", "--n", "25"]));
        parse_csv(&text).1.iter().map(|r| r[1].parse().unwrap()).collect()
    };
    let base = grid("table1_t0.json");
    let reactive = grid("table1_t1.json");
    assert_eq!(base.len(), 25);
    for (x, y) in base.iter().zip(&reactive) {
        assert!(y > x);
    }
}

#[test]
fn curve_rejects_bad_grid() {
    let cfg = fixture("table1_t0.json");
    for args in [["--xmin", "2.0", "--xmax", "1.0", "--n", "5"], ["--xmin", "0.5", "--xmax", "1.0", "--n", "1"]] {
        let mut all = vec!["curve", cfg.to_str().unwrap()];
        all.extend(args);
        let out = run(&all);
        assert_eq!(out.status.code(), Some(1));
        assert!(out.stdout.is_empty());
    }
}

fn text_has_label(out: &Output, label: &str) -> bool {
    parse_csv(&stdout(out)).1.iter().any(|r| r[0] == label)
}

#[test]
fn tables_have_expected_rows() {
    for (which, n) in [("reaction-compare", 3), ("statics", 5), ("horizon", 4)] {
        let (header, rows) = parse_csv(&stdout(&run(&["table", which])));
        assert_eq!(header, ["label", "a", "b", "alpha"]);
        assert_eq!(rows.len(), n, "{which}");
        for row in rows {
            assert_eq!(row.len(), 4);
            let a: f64 = row[1].parse().unwrap();
            let b: f64 = row[2].parse().unwrap();
            let alpha: f64 = row[3].parse().unwrap();
            assert!(a < alpha && alpha < b, "{row:?}");
        }
        if which == "horizon" {
            assert!(text_has_label(&run(&["table", which]), "T~U[0,1]"));
        }
    }
    assert_eq!(run(&["table", "nonsense"]).status.code(), Some(2));
}

#[test]
fn simulate_reads_back_the_exact_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("table1_t1.json");
    let sol_path = dir.path().join("solution.json");
    let out = run(&["solve", cfg.to_str().unwrap(), "--out", sol_path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let sol: Value = serde_json::from_str(&std::fs::read_to_string(&sol_path).unwrap()).unwrap();

    let small = write_config(
        dir.path(),
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4},
            "reaction": {"t": {"point": 1.0}, "sigma_shift": {"point": 0.1}},
            "cost": {"K": 0.5},
            "sim": {"x0": 1.4, "dt": 0.01, "horizon": 60.0, "n_paths": 200, "seed": 5}}"#,
    );
    let events = dir.path().join("events.csv");
    let text = stdout(&run(&[
        "simulate",
        small.to_str().unwrap(),
        "--policy-from",
        sol_path.to_str().unwrap(),
        "--perturb",
        "alpha+0.05",
        "--events",
        events.to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&text).unwrap();
    for key in ["a", "b", "alpha"] {
        assert_eq!(report["policy"][key].as_f64(), sol[key].as_f64(), "{key}");
    }
    let rows = report["comparison"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["diff_vs_solved"].as_f64(), Some(0.0));
    let shifted = rows[1]["policy"]["alpha"].as_f64().unwrap();
    assert!((shifted - sol["alpha"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(report["estimate"]["n_paths"].as_u64(), Some(200));

    let log = std::fs::read_to_string(&events).unwrap();
    assert!(log.starts_with("path,t,event,x_before,x_after,T_drawn,sigma2_drawn,mu2_drawn\n"));
}

#[test]
fn simulate_rejects_empty_run_and_bad_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("table1_t0.json");
    let sol_path = dir.path().join("solution.json");
    std::fs::write(&sol_path, stdout(&run(&["solve", cfg.to_str().unwrap()]))).unwrap();

    let empty = write_config(
        dir.path(),
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4}, "cost": {"K": 0.5}, "sim": {"n_paths": 0}}"#,
    );
    let out = run(&["simulate", empty.to_str().unwrap(), "--policy-from", sol_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());

    let out = run(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--policy-from",
        sol_path.to_str().unwrap(),
        "--perturb",
        "gamma*2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("table1_t1.json");
    let first = run(&["solve", cfg.to_str().unwrap()]);
    let second = run(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(stdout(&first), stdout(&second));

    let sol_path = dir.path().join("solution.json");
    std::fs::write(&sol_path, &first.stdout).unwrap();
    let small = write_config(
        dir.path(),
        r#"{"model": {"mu": 0.1, "sigma": 0.3, "r": 0.06, "rho": 1.4},
            "reaction": {"t": {"point": 1.0}, "sigma_shift": {"point": 0.1}},
            "cost": {"K": 0.5},
            "sim": {"dt": 0.01, "horizon": 40.0, "n_paths": 300, "seed": 11}}"#,
    );
    let sim = || stdout(&run(&["simulate", small.to_str().unwrap(), "--policy-from", sol_path.to_str().unwrap()]));
    assert_eq!(sim(), sim());
}

#[test]
fn verify_accepts_solution_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("table1_t0.json");
    let text = stdout(&run(&["solve", cfg.to_str().unwrap()]));
    let sol_path = dir.path().join("solution.json");
    std::fs::write(&sol_path, &text).unwrap();
    let report: Value =
        serde_json::from_str(&stdout(&run(&["verify", cfg.to_str().unwrap(), "--solution", sol_path.to_str().unwrap()])))
            .unwrap();
    assert_eq!(report["all_pass"], Value::Bool(true));

    let mut sol: Value = serde_json::from_str(&text).unwrap();
    sol["theta"] = Value::from(100.0);
    std::fs::write(&sol_path, sol.to_string()).unwrap();
    let out = run(&["verify", cfg.to_str().unwrap(), "--solution", sol_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_pass"], Value::Bool(false));
}

#[test]
fn sweep_over_cost_widens_band() {
    let cfg = fixture("table1_t0.json");
    let text = stdout(&run(&["sweep", cfg.to_str().unwrap(), "--param", "K", "--from", "0.3", "--to", "0.7", "--n", "3"]));
    let (header, rows) = parse_csv(&text);
    assert_eq!(header, ["K", "a", "b", "alpha"]);
    assert_eq!(rows.len(), 3);
    let widths: Vec<f64> = rows
        .iter()
        .map(|r| r[2].parse::<f64>().unwrap() - r[1].parse::<f64>().unwrap())
        .collect();
    assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
}
