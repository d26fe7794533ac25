//! End-to-end behavior of the `pwmini` binary: documented fixed points,
//! report shapes, and failure-path exit codes.

use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pwmini")
}

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn pwmini binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

/// Rows of a CSV section, stopping at the next comment line.
fn section<'a>(text: &'a str, name: &str) -> Vec<&'a str> {
    text.lines()
        .skip_while(|l| *l != format!("# section {name}"))
        .skip(2) // the comment and the header
        .take_while(|l| !l.starts_with('#'))
        .collect()
}

#[test]
fn plan_on_the_bundled_table_prints_1024() {
    let input = config("plan_si8192.json");
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("plan.csv");
    let out = run(&["plan", "--input", &input, "--out", table.to_str().unwrap()]);
    assert!(out.status.success());
    // With the table diverted to --out, stdout is the bare chosen count.
    assert_eq!(stdout(&out).trim(), "1024");
    let table = std::fs::read_to_string(&table).unwrap();
    assert!(table.starts_with("# pwmini plan csv v1\n"));
    assert!(table.contains("1024,2.1e2,yes"), "{table}");
    // Non-power-of-2 rows from the measured table never become candidates.
    assert!(!table.contains("1000"), "{table}");
}

#[test]
fn bundled_two_atom_system_converges_quickly() {
    let out = run(&[
        "scf",
        "run",
        "--config",
        &config("scf_two_atom.json"),
        "--procs",
        "2",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let summary = section(&text, "summary");
    assert_eq!(summary.len(), 1, "{text}");
    let fields: Vec<&str> = summary[0].split(',').collect();
    assert_eq!(fields[0], "true", "did not converge: {text}");
    let iterations: usize = fields[1].parse().unwrap();
    assert!(iterations <= 30, "took {iterations} outer iterations");
    let residual: f64 = fields[2].parse().unwrap();
    assert!(residual < 1e-7, "final residual {residual}");
    // Eigenvalues are reported for exactly the configured wavefunctions.
    assert_eq!(section(&text, "eigenvalues").len(), 4);
    assert_eq!(section(&text, "iterations").len(), iterations);
}

#[test]
fn allreduce_example_row_carries_an_ok_verdict() {
    let out = run(&[
        "bench", "allreduce", "--elems", "1000", "--procs", "8", "--C", "4",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let total = text
        .lines()
        .find(|l| l.contains("multistage_total"))
        .expect("total row");
    assert!(total.ends_with(",OK"), "{total}");
    // Default runs keep every timing column at literal zero.
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert!(line.contains(",0.000000e0,"), "{line}");
    }
}

#[test]
fn measured_timings_are_optional_and_marked() {
    let out = run(&[
        "bench",
        "repartition",
        "--r",
        "64",
        "--c",
        "16",
        "--procs",
        "4",
        "--reps",
        "1",
        "--measure",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().nth(2).expect("data row");
    let fields: Vec<&str> = row.split(',').collect();
    let inplace: f64 = fields[4].parse().unwrap();
    let reference: f64 = fields[5].parse().unwrap();
    assert!(inplace > 0.0 && reference > 0.0, "{row}");
}

#[test]
fn socket_transport_is_selectable() {
    let out = run(&[
        "bench",
        "allreduce",
        "--elems",
        "32",
        "--procs",
        "3",
        "--C",
        "2",
        "--transport",
        "socket",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("multistage_total"));
}

#[test]
fn malformed_config_reports_the_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"cell\": [4.0, 4.0\n}\n").unwrap();
    let out = run(&["scf", "run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "no line diagnostic: {err}");
}

#[test]
fn missing_input_files_exit_2() {
    let out = run(&["scf", "run", "--config", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["plan", "--input", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn physics_violating_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("odd.json");
    let text = std::fs::read_to_string(config("scf_two_atom.json"))
        .unwrap()
        .replace("\"electrons\": 4", "\"electrons\": 3");
    std::fs::write(&path, text).unwrap();
    let out = run(&["scf", "run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("electron"), "{err}");
}
