use std::path::Path;

use blendnav_core::error::ReplayError;
use blendnav_core::experiment::{execute, run_experiment, ExperimentPlan, RUNS_FILE};
use blendnav_core::metrics::{ControlMode, RunRecord};
use blendnav_core::replay::{replay_file, replay_record};

fn plan(conditions: &str, record_ticks: bool) -> ExperimentPlan {
    let json = format!(
        r#"{{
            "name": "replay",
            "scenarios": ["doorway.json"],
            "conditions": [{conditions}],
            "seeds": [5],
            "record_ticks": {record_ticks}
        }}"#
    );
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    ExperimentPlan::from_json(&json, &dir).unwrap()
}

fn blended_record() -> RunRecord {
    let batch = execute(&plan(r#"{"mode": "bsc", "delay": 0.5}"#, true), Some(1));
    assert!(batch.failures.is_empty());
    batch.records.into_iter().next().unwrap()
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

#[test]
fn untouched_logs_replay_cleanly() {
    let rec = blended_record();
    let report = replay_record(&rec).unwrap();
    assert_eq!(report.ticks_checked as u64, rec.ticks);
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
    assert_eq!(report.first_divergent_tick(), None);
}

#[test]
fn one_ulp_change_in_alpha_is_reported_at_its_tick() {
    let mut rec = blended_record();
    let ticks = rec.tick_log.as_mut().unwrap();
    let k = ticks.len() / 2;
    let blend = ticks[k].blend.as_mut().unwrap();
    blend.alpha = next_up(blend.alpha);
    let report = replay_record(&rec).unwrap();
    assert_eq!(report.first_divergent_tick(), Some(ticks_tick(&rec, k)));
    assert!(report
        .mismatches
        .iter()
        .any(|m| m.field == "alpha" && m.tick == ticks_tick(&rec, k)));
}

fn ticks_tick(rec: &RunRecord, k: usize) -> u64 {
    rec.tick_log.as_ref().unwrap()[k].tick
}

#[test]
fn altered_operator_command_breaks_the_blend() {
    let mut rec = blended_record();
    let ticks = rec.tick_log.as_mut().unwrap();
    let k = ticks
        .iter()
        .position(|t| t.blend.is_some_and(|b| b.alpha > 0.0))
        .expect("some tick gives the operator authority");
    ticks[k].user_cmd.omega += 0.25;
    let tick = ticks[k].tick;
    let report = replay_record(&rec).unwrap();
    assert_eq!(report.first_divergent_tick(), Some(tick));
    let fields: Vec<_> = report
        .mismatches
        .iter()
        .filter(|m| m.tick == tick)
        .map(|m| m.field)
        .collect();
    assert!(fields.contains(&"delta"), "{fields:?}");
    assert!(fields.contains(&"blended_cmd.omega"), "{fields:?}");
}

#[test]
fn teleported_pose_is_caught_by_the_motion_check() {
    let mut rec = blended_record();
    let ticks = rec.tick_log.as_mut().unwrap();
    let k = 40;
    ticks[k + 1].true_pose.x += 1e-6;
    let tick = ticks[k].tick;
    let report = replay_record(&rec).unwrap();
    assert!(report
        .mismatches
        .iter()
        .any(|m| m.tick == tick && m.field == "true_pose.x"));
}

#[test]
fn manual_runs_replay_and_carry_no_blend_values() {
    let batch = execute(&plan(r#"{"mode": "manual", "drift": 0.3}"#, true), Some(1));
    let rec = &batch.records[0];
    assert_eq!(rec.condition.mode, ControlMode::Manual);
    assert!(rec
        .tick_log
        .as_ref()
        .unwrap()
        .iter()
        .all(|t| t.blend.is_none()));
    let report = replay_record(rec).unwrap();
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
}

#[test]
fn records_without_ticks_cannot_be_replayed() {
    let batch = execute(&plan(r#"{"mode": "bsc"}"#, false), Some(1));
    let err = replay_record(&batch.records[0]).unwrap_err();
    assert!(matches!(err, ReplayError::MissingTicks { .. }), "{err}");
}

#[test]
fn replaying_a_written_log_file() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(
        &plan(r#"{"mode": "bsc"}, {"mode": "manual"}"#, true),
        Some(1),
        dir.path(),
    )
    .unwrap();
    let reports = replay_file(&dir.path().join(RUNS_FILE)).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.mismatches.is_empty()));
}

#[test]
fn corrupt_log_line_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RUNS_FILE);
    std::fs::write(&path, "{\"scenario\": 3}\n").unwrap();
    let err = replay_file(&path).unwrap_err();
    assert!(matches!(err, ReplayError::Parse { line: 1, .. }), "{err}");
}
