//! End-to-end checks of the `promptwise` binary: subcommand happy paths,
//! exit codes for each error class, and byte-level determinism of reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptwise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const EXPERT_CONFIG: &str = r#"
horizon = 30
num_trials = 2
root_seed = 17

[env]
kind = "expert_t2i"

[[algorithms]]
name = "oracle"
[[algorithms]]
name = "promptwise"
"#;

#[test]
fn run_writes_results_and_prints_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), EXPERT_CONFIG);
    let out_dir = dir.path().join("results");
    let out = run(&[
        "run",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("oracle: avg_utility"), "stdout: {text}");
    assert!(text.contains("promptwise: avg_utility"), "stdout: {text}");
    for rel in [
        "curves.csv",
        "oracle/trial_0.csv",
        "oracle/trial_1.csv",
        "oracle/summary.json",
        "promptwise/trial_0.csv",
        "promptwise/summary.json",
    ] {
        assert!(out_dir.join(rel).exists(), "missing {rel}");
    }
}

#[test]
fn rerun_and_seed_override_behave() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), EXPERT_CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out_dir, seed) in [(&a, None), (&b, None), (&c, Some("18"))] {
        let mut args = vec![
            "run".to_string(),
            "--config".into(),
            config.clone(),
            "--out".into(),
            out_dir.to_string_lossy().into_owned(),
        ];
        if let Some(seed) = seed {
            args.push("--seed".into());
            args.push(seed.into());
        }
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let read = |d: &Path| fs::read(d.join("promptwise/trial_0.csv")).unwrap();
    assert_eq!(read(&a), read(&b), "identical seed must reproduce bytes");
    assert_ne!(read(&a), read(&c), "--seed must change the run");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{EXPERT_CONFIG}\nbogus_key = 1"));
    let out = run(&["run", "--config", &config]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("bogus_key"));

    let out = run(&["run", "--config", "/does/not/exist.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // clap usage errors share the config exit code.
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("rows.jsonl");
    // One outcome per arm cannot cover the default round budget of 5.
    fs::write(&trace, r#"{"context": [1.0], "outcomes": {"0": [1]}}"#).unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            r#"
horizon = 5
num_trials = 1
root_seed = 0

[env]
kind = "trace"
trace_path = "{}"

[[env.arms]]
cost = 1.0

[[algorithms]]
name = "random"
"#,
            trace.display()
        ),
    );
    let out = run(&["run", "--config", &config]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("trace line 1"),
        "stderr: {}",
        stderr(&out)
    );

    let out = run(&["trace-check", "--config", &config]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn trace_check_reports_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("rows.jsonl");
    fs::write(
        &trace,
        r#"{"context": [1.0, 0.0], "outcomes": {"0": [1, 0, 1], "1": [0, 1, 1]}}"#,
    )
    .unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            r#"
horizon = 5
num_trials = 1
root_seed = 0

[env]
kind = "trace"
trace_path = "{}"

[[env.arms]]
cost = 1.0
[[env.arms]]
cost = 2.0

[hyper]
tau_max = 3

[[algorithms]]
name = "random"
"#,
            trace.display()
        ),
    );
    let out = run(&["trace-check", "--config", &config]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("1 rows"), "stdout: {text}");
    assert!(text.contains("2 arms"), "stdout: {text}");
    assert!(text.contains("context dim 2"), "stdout: {text}");
}

#[test]
fn plot_data_reads_the_config_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    // output_dir is a top-level key; it must precede the tables.
    let config = write_config(
        dir.path(),
        &format!("output_dir = \"{}\"\n{EXPERT_CONFIG}", out_dir.display()),
    );
    let out = run(&["run", "--config", &config]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let out = run(&["plot-data", "--config", &config]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for name in ["avg_utility.csv", "avg_cost.csv", "avg_success.csv"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }

    let out = run(&[
        "plot-data",
        "--out",
        dir.path().join("nowhere").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "state errors exit 1");

    let out = run(&["plot-data"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "flagless invocation is a usage error"
    );
}

#[test]
fn verify_prints_the_suite_report() {
    let out = run(&["verify", "--seed", "3"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("oracle equivalence"), "stdout: {text}");
    assert!(text.contains("all checks passed"), "stdout: {text}");
}
