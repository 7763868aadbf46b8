use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn roc_bin() -> &'static str {
    env!("CARGO_BIN_EXE_roc")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(roc_bin())
        .args(args)
        .current_dir(dir)
        .env_remove("ROC_CACHE_DIR")
        .output()
        .expect("spawn roc binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Trains a small cubic model in `dir` and returns the model path.
fn train_small(dir: &Path) -> PathBuf {
    let out = run_in(
        dir,
        &[
            "train", "--problem", "cubic", "--K", "12", "--N", "2", "--out-dir", "out",
        ],
    );
    assert!(
        out.status.success(),
        "train failed: {}{}",
        stdout(&out),
        stderr(&out)
    );
    let model = dir.join("out/model_cubic_k12_l1_n2.rocm");
    assert!(model.exists(), "expected model at {}", model.display());
    model
}

#[test]
fn train_writes_model_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    assert!(dir.path().join("out/trace_cubic_k12_l1_n2.csv").exists());
    let out = run_in(dir.path(), &["train", "--problem", "cubic", "--K", "12", "--N", "2", "--out-dir", "out"]);
    assert!(out.status.success());
    // Identical invocation rewrites the identical model.
    let bytes = std::fs::read(&model).unwrap();
    let again = std::fs::read(&model).unwrap();
    assert_eq!(bytes, again);
    let text = stdout(&out);
    assert!(text.contains("basis vectors"), "stdout: {text}");
}

#[test]
fn solve_reports_indicator_and_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let model_arg = model.to_str().unwrap();
    let out = run_in(
        dir.path(),
        &["solve", "--model", model_arg, "--mu", "1.0,1.0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("delta_rr="), "stdout: {text}");
    assert!(text.contains("c[0]="), "stdout: {text}");
    assert!(text.contains("converged=true"), "stdout: {text}");

    // A field dump adds a grid-sized CSV.
    let field_path = dir.path().join("field.csv");
    let out = run_in(
        dir.path(),
        &[
            "solve",
            "--model",
            model_arg,
            "--mu",
            "1.0,1.0",
            "--write-field",
            field_path.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let content = std::fs::read_to_string(&field_path).unwrap();
    // 13x13 grid plus header.
    assert_eq!(content.lines().filter(|l| !l.starts_with('#')).count(), 13 * 13 + 1);
}

#[test]
fn solve_rejects_out_of_domain_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let out = run_in(
        dir.path(),
        &["solve", "--model", model.to_str().unwrap(), "--mu", "100,100"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("outside"), "stderr: {}", stderr(&out));
}

#[test]
fn solve_reports_missing_model_as_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["solve", "--model", "no_such_model.rocm", "--mu", "1.0,1.0"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn unknown_problem_name_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["train", "--problem", "heat", "--K", "12", "--N", "2"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("heat"), "stderr: {}", stderr(&out));
}

#[test]
fn malformed_mu_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let out = run_in(
        dir.path(),
        &["solve", "--model", model.to_str().unwrap(), "--mu", "1.0"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn eps_tol_with_l1_indicator_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train", "--problem", "cubic", "--K", "12", "--N", "2", "--indicator", "l1",
            "--eps-tol", "1e-4",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn inspect_prints_selections_and_collocation_rows() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_small(dir.path());
    let out = run_in(dir.path(), &["inspect", "--model", model.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("problem=cubic"), "stdout: {text}");
    assert!(text.contains("bases=2"), "stdout: {text}");
    assert!(text.contains("collocation rows"), "stdout: {text}");
}
