//! End-to-end checks of the `hsl-sim` binary: exit codes, file outputs,
//! and the seed/out overrides.

use std::fs;
use std::path::Path;
use std::process::Command;

fn hsl_sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsl-sim"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const BOUNDS_DOC: &str = "\
[experiment]
name = sweep
command = bounds
seed = 9

[topology]
kind = hsl
n_s = 100
n_h = 5
b_hs = 2
b_hh = 2
b_sh = 2

[topology]
kind = el_local
n_s = 100
k = 4
";

#[test]
fn bounds_run_writes_csv_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bounds.ini", BOUNDS_DOC);
    let out = tmp.path().join("results");
    let status = hsl_sim()
        .args(["bounds", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.lines().count() == 3);
    assert!(fs::metadata(out.join("manifest.txt")).is_ok());
    assert!(fs::metadata(out.join("spec.resolved")).is_ok());
}

#[test]
fn subcommand_must_match_document_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bounds.ini", BOUNDS_DOC);
    let output = hsl_sim()
        .args(["spectral", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("bounds"), "{err}");
}

#[test]
fn missing_config_file_exits_two() {
    let output = hsl_sim()
        .args(["run", "--config", "/nonexistent/x.ini"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn seed_override_lands_in_spec_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bounds.ini", BOUNDS_DOC);
    let out = tmp.path().join("o");
    let status = hsl_sim()
        .args(["bounds", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "777"])
        .status()
        .unwrap();
    assert!(status.success());
    let snapshot = fs::read_to_string(out.join("spec.resolved")).unwrap();
    assert!(snapshot.contains("seed = 777"), "{snapshot}");
}

#[test]
fn tiny_training_run_emits_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = "\
[experiment]
name = tiny
command = run
seed = 3

[topology]
kind = hsl
n_s = 6
n_h = 2
b_hs = 2
b_hh = 1
b_sh = 1

[training]
rounds = 4
local_steps = 1
batch_size = 8
step_size = 0.05

[objective]
kind = quadratic
dim = 3
spread = 0.2
";
    let cfg = write_config(tmp.path(), "run.ini", doc);
    let out = tmp.path().join("o");
    let status = hsl_sim()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5); // header + 4 rounds
    assert!(fs::read_to_string(out.join("summary.csv"))
        .unwrap()
        .contains("final_loss"));
}
