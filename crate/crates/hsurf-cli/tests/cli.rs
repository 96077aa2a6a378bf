use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn hsurf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsurf")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Values of one column of scan CSV output.
fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let k = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn validate_builtin_groups() {
    for g in ["heisenberg", "heisenberg:3", "engel", "abelian:2"] {
        let o = hsurf(&["--group", g, "validate"]);
        assert_eq!(code(&o), 0, "{}: {}", g, stderr(&o));
        assert!(stdout(&o).starts_with("valid"));
    }
}

#[test]
fn validate_reports_jacobi_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"strata":[3,1,1],"brackets":[
            {"i":1,"j":2,"r":4,"c":1},{"i":2,"j":3,"r":4,"c":1},{"i":1,"j":4,"r":5,"c":1}]}"#,
    )
    .unwrap();
    let o = hsurf(&["--group", path.to_str().unwrap(), "validate"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("JacobiViolation at (1,2,3,5)"), "{}", stdout(&o));
}

#[test]
fn validate_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\"strata\": [2, 1], ").unwrap();
    assert_eq!(code(&hsurf(&["--group", path.to_str().unwrap(), "validate"])), 2);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&hsurf(&["--group", missing.to_str().unwrap(), "validate"])), 2);
    assert_eq!(code(&hsurf(&["--group", "heisenberg:0", "validate"])), 2);
    assert_eq!(code(&hsurf(&["--format", "pdf", "validate"])), 2);
}

#[test]
fn scan_paraboloid() {
    let o = hsurf(&["--surface", "hparab", "--patch", r#"{"lo":[0.1,0.1],"hi":[1.1,1.1],"resolution":32}"#, "scan"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 1025);
    assert!(column(&csv, "B_TS").iter().all(|v| v.parse::<f64>().unwrap() < 0.0));
    assert!(column(&csv, "masked").iter().all(|v| v == "0"));
}

#[test]
fn scan_vertical_plane() {
    let o = hsurf(&["--surface", "vplane", "--patch", r#"{"lo":[-1,-1],"hi":[1,1],"resolution":16}"#, "scan"]);
    assert_eq!(code(&o), 0);
    let csv = stdout(&o);
    assert!(column(&csv, "B_TS").iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn scan_reports_masked_nodes() {
    // the midpoint grid puts nodes exactly on x + y = 0
    let o = hsurf(&["--patch", r#"{"lo":[-1,-1],"hi":[1,1],"resolution":33}"#, "scan"]);
    assert_eq!(code(&o), 0);
    let err = stderr(&o);
    assert!(err.contains("33 masked"), "{}", err);
    let csv = stdout(&o);
    let masked: Vec<String> = column(&csv, "masked");
    assert_eq!(masked.iter().filter(|m| *m == "1").count(), 33);
    let b = column(&csv, "B_TS");
    assert!(masked.iter().zip(&b).all(|(m, v)| (m == "1") == (v == "nan")));
}

#[test]
fn scan_is_deterministic_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = hsurf(&["--seed", "3", "--out", p.to_str().unwrap(), "--patch", r#"{"lo":[0,0],"hi":[1,1],"resolution":12}"#, "scan"]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let svg = dir.path().join("b.svg");
    let o = hsurf(&["--format", "svg", "--out", svg.to_str().unwrap(), "--patch", r#"{"lo":[0,0],"hi":[1,1],"resolution":12}"#, "scan"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
}

#[test]
fn scan_input_errors() {
    assert_eq!(code(&hsurf(&["--patch", r#"{"lo":[0],"hi":[1]}"#, "scan"])), 2);
    assert_eq!(code(&hsurf(&["--patch", r#"{"lo":[0,0],"hi":[1,1],"colour":2}"#, "scan"])), 2);
    assert_eq!(code(&hsurf(&["scan", "--column", "nope", "--format", "svg"])), 2);
    assert_eq!(code(&hsurf(&["--group", "engel", "--surface", "vplane", "--format", "svg", "scan"])), 2);
    assert_eq!(code(&hsurf(&["--surface", "x1 +* x2", "scan"])), 2);
}

#[test]
fn identities_command() {
    let o = hsurf(&["identities", "--samples", "30"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = hsurf(&["--tol", "1e-16", "identities", "--samples", "30"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    let o = hsurf(&["--group", "abelian:3", "--surface", "vplane", "--format", "json", "identities", "--samples", "20"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["pass"], Value::Bool(true));
}

fn stability(surface: &str, patch: &str) -> Value {
    let o = hsurf(&["--surface", surface, "--patch", patch, "stability"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn stability_verdicts() {
    let r = stability("hparab", r#"{"lo":[0.5,0.5],"hi":[1.5,1.5],"resolution":32}"#);
    assert_eq!(r["certificate"]["verdict"]["StableBySignDefiniteVarpi"]["alpha"], 3);
    assert!(r["min_second_variation"].as_f64().unwrap() >= -1e-8);

    let r = stability("vplane", r#"{"lo":[-1,-1],"hi":[1,1],"resolution":32}"#);
    assert_eq!(r["certificate"]["verdict"], "StableByNonnegativePotential");
    assert!(r["min_second_variation"].as_f64().unwrap() > 0.0);

    let r = stability("nvplane", r#"{"lo":[-1,-1],"hi":[1,1],"resolution":32}"#);
    assert_eq!(r["certificate"]["verdict"], "Inconclusive");
}

#[test]
fn stability_requires_an_h_minimal_surface() {
    let o = hsurf(&["--surface", "x3 - x1^2 - x2^2", "--patch", r#"{"lo":[0.2,0.2],"hi":[1,1],"resolution":8}"#, "stability"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn perimeter_and_variation_commands() {
    let o = hsurf(&["--patch", r#"{"lo":[0,0],"hi":[1,1],"resolution":16}"#, "perimeter"]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o).lines().next().unwrap().to_string();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((value - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

    let o = hsurf(&["--patch", r#"{"lo":[0.1,0.1],"hi":[1.1,1.1],"resolution":64}"#, "variation", "--bumps", "1"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["pass"], Value::Bool(true));
}
