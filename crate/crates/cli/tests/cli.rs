//! End-to-end checks of the command-line pipeline. Every test drives the
//! compiled binary against the offline oracle backend inside a temp
//! directory, so the whole suite runs without network access.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn abbel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abbel"))
}

fn run_ok(command: &mut Command) -> Output {
    let output = command.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn path_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_runs_offline() {
    let dir = tempfile::tempdir().unwrap();
    let traj = path_arg(dir.path(), "traj.jsonl");
    let groups = path_arg(dir.path(), "groups.jsonl");
    let rewards = path_arg(dir.path(), "rewards.jsonl");
    let report = path_arg(dir.path(), "report");
    let batch = path_arg(dir.path(), "batch.jsonl");

    let out = run_ok(abbel().args(["run", "--tasks", "4", "--seed", "10", "--out", &traj]));
    let text = stdout_of(&out);
    assert!(text.contains("8 episodes (4 tasks x 2 rollouts)"), "stdout: {text}");
    assert!(text.contains("8 solved"), "stdout: {text}");

    let out = run_ok(abbel().args(["grade", "--input", &traj, "--out", &groups]));
    let text = stdout_of(&out);
    assert!(text.contains("graded 8 bottleneck trajectories"), "stdout: {text}");
    // The oracle writes exact beliefs and regenerates them exactly.
    let group_count: usize = fs::read_to_string(&groups).unwrap().lines().count();
    assert!(text.contains(&format!("original beliefs exact: {group_count}/{group_count}")));

    let out = run_ok(abbel().args(["rewards", "--input", &traj, "--out", &rewards]));
    let text = stdout_of(&out);
    assert!(text.contains("8 reward records in 4 advantage groups"), "stdout: {text}");
    assert_eq!(fs::read_to_string(&rewards).unwrap().lines().count(), 8);

    let out = run_ok(abbel().args(["report", "--input", &traj, "--out", &report]));
    let text = stdout_of(&out);
    assert!(text.contains("success rate:"), "stdout: {text}");
    assert!(dir.path().join("report/report.json").is_file());
    assert!(dir.path().join("report/summary.txt").is_file());
    assert!(dir.path().join("report/regret.tsv").is_file());

    let out = run_ok(abbel().args([
        "export",
        "--input",
        &traj,
        "--belief-groups",
        &groups,
        "--out",
        &batch,
    ]));
    let text = stdout_of(&out);
    assert!(
        text.contains(&format!("8 trajectories, 4 advantage groups, {group_count} belief groups")),
        "stdout: {text}"
    );
    let first_line = fs::read_to_string(&batch).unwrap().lines().next().unwrap().to_string();
    assert!(first_line.contains("\"kind\":\"header\""), "header line: {first_line}");

    let out = run_ok(abbel().args(["replay", "--input", &traj]));
    assert!(stdout_of(&out).contains("re-verified 8/8 trajectories"));
}

#[test]
fn reports_from_two_regimes_compare() {
    let dir = tempfile::tempdir().unwrap();
    let bottleneck = path_arg(dir.path(), "abbel.jsonl");
    let baseline = path_arg(dir.path(), "vanilla.jsonl");
    let report_a = path_arg(dir.path(), "report_abbel");
    let report_b = path_arg(dir.path(), "report_vanilla");

    run_ok(abbel().args(["run", "--tasks", "3", "--out", &bottleneck]));
    run_ok(abbel().args(["run", "--regime", "vanilla", "--tasks", "3", "--out", &baseline]));
    run_ok(abbel().args(["report", "--input", &bottleneck, "--out", &report_a]));
    run_ok(abbel().args(["report", "--input", &baseline, "--out", &report_b]));

    let out = run_ok(abbel().args(["compare", &report_a, &report_b]));
    let text = stdout_of(&out);
    assert!(text.contains("abbel"), "compare output: {text}");
    assert!(text.contains("vanilla"), "compare output: {text}");
    assert!(text.contains("success_rate"), "compare output: {text}");
}

#[test]
fn config_file_controls_environment_and_rollouts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("harness.toml");
    fs::write(
        &config,
        r#"
[env]
name = "combination-lock-train"
horizon = 6

[rollout]
rollouts_per_task = 1
parallelism = 2
"#,
    )
    .unwrap();
    let traj = path_arg(dir.path(), "traj.jsonl");

    let out = run_ok(abbel().args([
        "run",
        "--config",
        config.to_str().unwrap(),
        "--tasks",
        "3",
        "--out",
        &traj,
    ]));
    let text = stdout_of(&out);
    assert!(text.contains("lock-l3-v10-h6"), "stdout: {text}");
    assert!(text.contains("3 tasks x 1 rollouts"), "stdout: {text}");

    // Lone rollouts cannot form advantage groups; the failure names the rule.
    let output = abbel().args(["rewards", "--input", &traj]).output().unwrap();
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("at least 2"), "stderr: {}", stderr_of(&output));
}

#[test]
fn missing_input_fails_with_the_path() {
    let output = abbel().args(["grade", "--input", "/nonexistent/traj.jsonl"]).output().unwrap();
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("/nonexistent/traj.jsonl"));
}

#[test]
fn replay_rejects_tampered_observations() {
    let dir = tempfile::tempdir().unwrap();
    let traj = path_arg(dir.path(), "traj.jsonl");
    run_ok(abbel().args(["run", "--tasks", "2", "--out", &traj]));

    // Rewrite position numbers everywhere: the file stays valid JSON but the
    // stored observations no longer match what the environment regenerates.
    let tampered = fs::read_to_string(&traj).unwrap().replace("Position 1", "Position 7");
    fs::write(&traj, tampered).unwrap();

    let output = abbel().args(["replay", "--input", &traj]).output().unwrap();
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("failed re-verification"),
        "stderr: {}",
        stderr_of(&output)
    );
}

#[test]
fn zero_tasks_is_rejected() {
    let output = abbel().args(["run", "--tasks", "0"]).output().unwrap();
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("--tasks"));
}
