use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formation-mpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// Writes a bundled scenario with one textual substitution applied.
fn edited(dir: &Path, name: &str, from: &str, to: &str) -> String {
    let text = formation_mpc::scenario::bundled_source(name).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.join("edited.toml");
    std::fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_bundled_example_passes() {
    let out = cli(&["check", "example1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS topology"), "{text}");
    assert!(text.contains("PASS hurwitz"), "{text}");
    assert!(text.contains("gain condition"), "{text}");
}

#[test]
fn check_reports_unreachable_leader() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), "example1", "pinning = [1.0, 0.0, 0.0]", "pinning = [0.0, 0.0, 0.0]");
    let out = cli(&["check", &path]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("leader unreachable"), "{}", stdout(&out));
}

#[test]
fn check_reports_non_hurwitz_surface() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), "example2", "lambda = [1.0]", "lambda = [-1.0]");
    let out = cli(&["check", &path]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("FAIL hurwitz"), "{}", stdout(&out));
}

#[test]
fn schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited(dir.path(), "example1", "h = 0.01", "h = 0.01\nstep = 0.01");
    let out = cli(&["check", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("step") && err.contains("line"), "{err}");
}

#[test]
fn zero_length_run_writes_header_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&["run", "example1", "--t-final", "0", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let states = std::fs::read_to_string(out_dir.join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 2);
    let telemetry = std::fs::read_to_string(out_dir.join("telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().count(), 1);
    let s = summary(&out_dir);
    assert_eq!(s["overrides"]["t_final"], "0");
    assert_eq!(s["state_rows"], 1);
}

#[test]
fn flags_override_the_document_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "run",
        "example1",
        "--t-final",
        "0.4",
        "--seed",
        "9",
        "--substeps",
        "10",
        "--snapshot-mode",
        "--p-construction",
        "literal",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = summary(&out_dir);
    assert_eq!(s["seed"], 9);
    assert_eq!(s["substeps"], 10);
    assert_eq!(s["snapshot_mode"], true);
    assert_eq!(s["p_construction"], "literal");
    for key in ["seed", "substeps", "snapshot_mode", "p_construction", "t_final"] {
        assert!(s["overrides"].get(key).is_some(), "{key}");
    }
    let states = std::fs::read_to_string(out_dir.join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 2 + 20);
}

#[test]
fn same_seed_gives_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let hashes: Vec<serde_json::Value> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let out = cli(&["run", "example1", "--t-final", "1", "--out", out_dir.to_str().unwrap()]);
            assert!(out.status.success(), "{}", stderr(&out));
            summary(&out_dir)["sha256"].clone()
        })
        .collect();
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn demo_writes_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["demo", "example1", "--t-final", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["plot_outputs.csv", "plot_errors.csv", "plot_controls.csv", "plot_faults.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let outputs = std::fs::read_to_string(dir.path().join("plot_outputs.csv")).unwrap();
    assert!(outputs.starts_with("t,y0_1,y1_1,target1_1"), "{outputs}");
}

#[test]
fn unknown_demo_is_an_error() {
    let out = cli(&["demo", "example3"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("example1"), "{}", stderr(&out));
}

#[test]
fn invalid_flag_value_is_rejected() {
    let out = cli(&["run", "example1", "--p-construction", "inverse"]);
    assert!(!out.status.success());
}
