use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn blendnav() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blendnav"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write_plan(dir: &Path, conditions: &str) -> PathBuf {
    let plan = format!(
        r#"{{
  "name": "cli-test",
  "scenarios": [{:?}],
  "conditions": {conditions},
  "seeds": [1, 2],
  "record_ticks": true
}}"#,
        scenarios().join("doorway.json")
    );
    let path = dir.join("plan.json");
    std::fs::write(&path, plan).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    blendnav().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn run_small_plan(dir: &Path) -> PathBuf {
    let plan = write_plan(dir, r#"[{"mode": "bsc"}, {"mode": "bsc", "delay": 0.5}]"#);
    let out_dir = dir.join("out");
    let out = run(&[
        "run",
        "--plan",
        plan.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--parallel",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("runs.jsonl").exists());
    out_dir
}

#[test]
fn run_analyze_and_replay_succeed_on_a_fresh_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = run_small_plan(dir.path());

    let analyzed = run(&["analyze", "--logs", out_dir.to_str().unwrap()]);
    assert_eq!(code(&analyzed), 0);
    let text = String::from_utf8(analyzed.stdout).unwrap();
    assert!(text.contains("bsc_delay_0.5"), "{text}");

    let replayed = run(&[
        "replay",
        "--log",
        out_dir.join("runs.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&replayed), 0);
    let text = String::from_utf8(replayed.stdout).unwrap();
    assert!(
        text.contains("4 runs replayed, 0 with mismatches"),
        "{text}"
    );
}

#[test]
fn tampered_log_exits_with_integrity_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = run_small_plan(dir.path());
    let log = out_dir.join("runs.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let alpha = &mut rec["tick_log"][10]["blend"]["alpha"];
    let bumped = alpha.as_f64().unwrap() + 1e-3;
    *alpha = bumped.into();
    lines[0] = rec.to_string();
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();

    let out = run(&["replay", "--log", log.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("first divergent tick 10 (alpha"), "{text}");
}

#[test]
fn corrupt_log_exits_with_integrity_failure() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("runs.jsonl");
    std::fs::write(&log, "{not json\n").unwrap();
    assert_eq!(code(&run(&["replay", "--log", log.to_str().unwrap()])), 3);
}

#[test]
fn bad_plans_exit_with_plan_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["run", "--plan", missing.to_str().unwrap()])), 2);

    let empty = write_plan(dir.path(), "[]");
    let out = run(&["run", "--plan", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("condition"));

    let negative = write_plan(dir.path(), r#"[{"mode": "bsc", "delay": -1.0}]"#);
    assert_eq!(
        code(&run(&["run", "--plan", negative.to_str().unwrap()])),
        2
    );
}

#[test]
fn serve_rejects_bad_scenario_and_settings() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "serve",
        "--scenario",
        missing.to_str().unwrap(),
        "--port",
        "0",
    ]);
    assert_eq!(code(&out), 2);

    let doorway = scenarios().join("doorway.json");
    let out = run(&[
        "serve",
        "--scenario",
        doorway.to_str().unwrap(),
        "--port",
        "0",
        "--delay",
        "-0.5",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn serve_announces_its_endpoint() {
    let doorway = scenarios().join("doorway.json");
    let mut child = blendnav()
        .args([
            "serve",
            "--scenario",
            doorway.to_str().unwrap(),
            "--port",
            "0",
        ])
        .args([
            "--mode",
            "manual",
            "--delay",
            "0.5",
            "--feedback-delay",
            "0.1",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.starts_with("serving ws://127.0.0.1:"), "{line}");
    assert!(line.trim_end().contains("/ws"));
}
