//! Black-box tests of the command-line interface: exit codes, determinism,
//! and agreement between subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdbounds"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

/// Simulated two-cutoff data shared by the tests.
fn sim_csv(dir: &Path) -> PathBuf {
    let path = dir.join("sim.csv");
    let out = run(&[
        "simulate",
        "--n",
        "2000",
        "--seed",
        "1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    path
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = run(&["simulate", "--n", "500", "--seed", "42", "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same flags must give byte-identical output"
    );
    let c = dir.path().join("c.csv");
    let out = run(&["simulate", "--n", "500", "--seed", "43", "--out", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn bounds_report_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    let args = [
        "bounds",
        "--data",
        data.to_str().unwrap(),
        "--restriction",
        "brm",
        "--kappa",
        "1",
        "--x-star",
        "50",
    ];
    let out1 = run(&args);
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    let out2 = run(&args);
    assert_eq!(out1.stdout, out2.stdout, "bounds output must be deterministic");

    let v = stdout_json(&out1);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["restriction"], "BRM");
    assert_eq!(v["empty"], false);
    assert!(v["lower"].as_f64().unwrap() < v["upper"].as_f64().unwrap());
    assert!(v["point_estimate_constant_bias"].is_number());
    assert!(v["diagnostics"]["j_star"].is_object());
    assert!(v["diagnostics"]["bias_sup"].as_array().unwrap().len() == 2);
}

#[test]
fn usage_and_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        // unknown restriction
        vec!["bounds", "--data", data.to_str().unwrap(), "--restriction", "xyz", "--kappa", "1", "--x-star", "50"],
        // missing kappa
        vec!["bounds", "--data", data.to_str().unwrap(), "--restriction", "brm", "--x-star", "50"],
        // missing target
        vec!["bounds", "--data", data.to_str().unwrap(), "--restriction", "brm", "--kappa", "1"],
        // target outside the extrapolation region
        vec!["bounds", "--data", data.to_str().unwrap(), "--restriction", "brm", "--kappa", "1", "--x-star", "90"],
        // nonexistent file
        vec!["bounds", "--data", "/nonexistent.csv", "--restriction", "brm", "--kappa", "1", "--x-star", "50"],
        // single-cutoff restriction on two-cutoff data
        vec!["bounds", "--data", data.to_str().unwrap(), "--restriction", "lip", "--kappa", "1", "--x-star", "50"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "args {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn empty_identified_set_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    // kappa_0 = kappa_1 = 0 pins the bias to two incompatible constants, so
    // the polynomial-expansion intersection is empty.
    let out = run(&[
        "bounds",
        "--data",
        data.to_str().unwrap(),
        "--restriction",
        "bpe",
        "--kappas",
        "0,0",
        "--x-star",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["empty"], true);
    assert!(v["lower"].is_null());
}

#[test]
fn sweep_matches_bounds_and_orders_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    let csv_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--restriction",
        "brm",
        "--x-star",
        "50",
        "--kappa-grid",
        "0:3:0.25",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "kappa,lower,upper,empty");
    assert_eq!(rows.len(), 14, "13 grid rows plus header");

    let mut prev_width = -1.0;
    let mut at_one = None;
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let (k, lo, hi): (f64, f64, f64) =
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        let width = hi - lo;
        assert!(width > prev_width, "widths must increase strictly in kappa");
        prev_width = width;
        if k == 1.0 {
            at_one = Some((lo, hi));
        }
    }
    // The kappa = 1 row agrees bit-for-bit with a direct bounds run.
    let b = run(&[
        "bounds", "--data", data.to_str().unwrap(), "--restriction", "brm",
        "--kappa", "1", "--x-star", "50",
    ]);
    let v = stdout_json(&b);
    let (lo, hi) = at_one.expect("grid contains kappa = 1");
    assert_eq!(lo, v["lower"].as_f64().unwrap());
    assert_eq!(hi, v["upper"].as_f64().unwrap());
}

#[test]
fn ib_is_bit_exact_intersection() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    let get = |restriction: &str, members: Option<&str>| -> serde_json::Value {
        let mut args = vec![
            "bounds".to_string(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--restriction".into(),
            restriction.into(),
            "--kappa".into(),
            "1".into(),
            "--x-star".into(),
            "50".into(),
        ];
        if let Some(m) = members {
            args.push("--members".into());
            args.push(m.into());
        }
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)
    };
    let bam = get("bam", None);
    let brm = get("brm", None);
    let ib = get("ib", Some("bam,brm"));
    let l = bam["lower"].as_f64().unwrap().max(brm["lower"].as_f64().unwrap());
    let u = bam["upper"].as_f64().unwrap().min(brm["upper"].as_f64().unwrap());
    assert_eq!(ib["lower"].as_f64().unwrap(), l);
    assert_eq!(ib["upper"].as_f64().unwrap(), u);
}

#[test]
fn falsify_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim_csv(dir.path());
    let json_path = dir.path().join("falsify.json");
    let out = run(&[
        "falsify",
        "--data",
        data.to_str().unwrap(),
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Human-readable tables on stdout.
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("global polynomial approach"));
    assert!(text.contains("local polynomial approach"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert!(v["global"]["p_value"].is_number());
    assert!(v["local"]["p_value"].is_number());
}
