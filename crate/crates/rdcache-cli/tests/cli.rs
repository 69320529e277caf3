//! End-to-end checks of the command line: output schema, determinism,
//! exit codes, and the spec-file transform path.

use std::path::PathBuf;
use std::process::{Command, Output};

fn binary() -> PathBuf {
    let mut p = PathBuf::from(env!("CARGO_BIN_EXE_rdcache"));
    assert!(p.exists(), "binary missing at {:?}", p);
    p = p.canonicalize().unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("failed to spawn rdcache")
}

fn write_spec(dir: &tempfile::TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const DSBS_SPEC: &str = r#"{
  "alphabet_sizes": [2, 2],
  "pmf": [0.45, 0.05, 0.05, 0.45],
  "distortions": ["hamming", "hamming"]
}"#;

#[test]
fn dsbs_curve_has_header_and_endpoint() {
    let out = run(&["dsbs", "--rho", "0.1", "--C-grid", "0:1:4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap();
    assert!(comment.starts_with("# rdcache v"));
    assert!(comment.contains("config_hash="));
    assert!(comment.contains("seed="));
    assert_eq!(lines.next().unwrap(), "C,lower,upper,exact");
    let first = lines.next().unwrap();
    assert_eq!(first, "0,1,1,true");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(&dir, "dsbs.json", DSBS_SPEC);
    let args = [
        "rdc", "--spec", &spec, "--D", "0,0", "--C-grid", "0:1.4:3", "--restarts", "6",
        "--seed", "3",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same seed must give identical bytes");

    // rdc columns as documented
    let text = String::from_utf8(a.stdout).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert_eq!(
        header,
        "C,R_solver,R_genie,R_superuser,R_supergenie,R_envelope,witness_aux_size,converged"
    );
}

#[test]
fn config_errors_exit_with_code_two() {
    let out = run(&["rdc", "--spec", "/nonexistent.json", "--D", "0,0", "--C-grid", "0:1:2"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_spec(
        &dir,
        "bad.json",
        r#"{"alphabet_sizes": [2, 2], "pmf": [0.2, 0.2, 0.05, 0.05]}"#,
    );
    let out = run(&["rdc", "--spec", &bad, "--D", "0,0", "--C-grid", "0:1:2"]);
    assert_eq!(out.status.code(), Some(2), "pmf off by half must be rejected");

    let spec = write_spec(&dir, "dsbs.json", DSBS_SPEC);
    let out = run(&["rdc", "--spec", &spec, "--D", "0,0", "--C-grid", "1:0:2"]);
    assert_eq!(out.status.code(), Some(2), "backwards grid");
}

#[test]
fn json_format_parses_and_carries_rows() {
    let out = run(&["dsbs", "--rho", "0.25", "--C-grid", "0:1:2", "--format", "json"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["command"], "dsbs");
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["lower"], 1.0);
    assert_eq!(rows[0]["exact"], true);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = run(&[
        "gaussian", "--rho", "0.8", "--D", "0.1", "--C", "2.0",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("S2"));
    // S2 value 0.29248 appears in the rate column
    assert!(text.contains("0.2924"), "{}", text);
}

#[test]
fn common_info_reports_component_map_and_wyner() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(&dir, "dsbs.json", DSBS_SPEC);
    let out = run(&["common-info", "--spec", &spec]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gacs_korner_zero,0,"));
    assert!(text.contains("wyner_ci_dsbs,0.87276"));
}

#[test]
fn spec_transform_field_changes_rd_targets() {
    let dir = tempfile::tempdir().unwrap();
    // squared-error-style transform on a three-level matrix moves the
    // distortion scale; identity on a Hamming matrix must not
    let plain = write_spec(&dir, "plain.json", DSBS_SPEC);
    let transformed = write_spec(
        &dir,
        "transformed.json",
        r#"{
  "alphabet_sizes": [2, 2],
  "pmf": [0.45, 0.05, 0.05, 0.45],
  "distortions": ["hamming", "hamming"],
  "f": [{"kind": "identity"}, {"kind": "identity"}]
}"#,
    );
    let a = run(&["rd", "--spec", &plain, "--source", "1", "--D", "0.1"]);
    let b = run(&["rd", "--spec", &transformed, "--source", "1", "--D", "0.1"]);
    assert!(a.status.success() && b.status.success());
    let strip = |v: Vec<u8>| -> String {
        String::from_utf8(v)
            .unwrap()
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(a.stdout), strip(b.stdout));

    // power transform with exponent 2 fixes the Hamming levels but squares
    // the target: a root-mean style criterion at 0.1 equals the plain
    // criterion at 0.01
    let squared = write_spec(
        &dir,
        "squared.json",
        r#"{
  "alphabet_sizes": [2, 2],
  "pmf": [0.45, 0.05, 0.05, 0.45],
  "distortions": ["hamming", "hamming"],
  "f": [{"kind": "power", "exponent": 2.0}, {"kind": "power", "exponent": 2.0}]
}"#,
    );
    let c = run(&["rd", "--spec", &squared, "--source", "1", "--D", "0.1"]);
    assert!(c.status.success());
    let rate_of = |stdout: Vec<u8>| -> f64 {
        String::from_utf8(stdout)
            .unwrap()
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    let squared_rate = rate_of(c.stdout);
    let plain_at_squared_target =
        rate_of(run(&["rd", "--spec", &plain, "--source", "1", "--D", "0.01"]).stdout);
    assert!((squared_rate - plain_at_squared_target).abs() < 1e-12);
    let plain_rate = rate_of(run(&["rd", "--spec", &plain, "--source", "1", "--D", "0.1"]).stdout);
    assert!(squared_rate > plain_rate + 0.1, "transform must bite");
}
