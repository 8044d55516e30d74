//! Re-derives logged arbitration values and motion from logged inputs and
//! reports where an implementation disagrees with its own logs.

use std::path::Path;

use serde::Serialize;

use crate::blend::blend_step;
use crate::error::ReplayError;
use crate::experiment::read_runs;
use crate::geometry::Twist2D;
use crate::kinematics::{clamp_twist, integrate_unicycle, update_odometry};
use crate::metrics::{ControlMode, RunRecord};
use crate::sim::DriftMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub tick: u64,
    pub field: &'static str,
    pub logged: f64,
    pub replayed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub scenario: String,
    pub condition: String,
    pub seed: u64,
    pub ticks_checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn first_divergent_tick(&self) -> Option<u64> {
        self.mismatches.iter().map(|m| m.tick).min()
    }
}

fn check(out: &mut Vec<Mismatch>, tick: u64, field: &'static str, logged: f64, replayed: f64) {
    // bit-level comparison: any change in the arithmetic shows up here
    if logged.to_bits() != replayed.to_bits() && !(logged == 0.0 && replayed == 0.0) {
        out.push(Mismatch {
            tick,
            field,
            logged,
            replayed,
        });
    }
}

fn check_twist(
    out: &mut Vec<Mismatch>,
    tick: u64,
    names: [&'static str; 2],
    logged: &Twist2D,
    replayed: &Twist2D,
) {
    check(out, tick, names[0], logged.vx, replayed.vx);
    check(out, tick, names[1], logged.omega, replayed.omega);
}

/// Replays one run record that carries its tick log.
pub fn replay_record(rec: &RunRecord) -> Result<ReplayReport, ReplayError> {
    let ticks = rec
        .tick_log
        .as_ref()
        .ok_or_else(|| ReplayError::MissingTicks {
            run: format!(
                "{}/{}/{}",
                rec.scenario, rec.condition.label, rec.condition.seed
            ),
        })?;
    let mut mm = Vec::new();
    let mut prev_alpha = None;
    let mut prev_applied = Twist2D::ZERO;
    let drift_rate = match rec.drift_mode {
        DriftMode::Rate => rec.condition.drift,
        DriftMode::StaticOffset => 0.0,
    };
    for (i, t) in ticks.iter().enumerate() {
        let requested = match (rec.condition.mode, &t.blend) {
            (ControlMode::Bsc, Some(logged)) => {
                let b = blend_step(
                    &t.user_cmd,
                    &t.agent_cmd,
                    &t.odom_pose,
                    &rec.goal,
                    &rec.blend_params,
                    rec.delta_mode,
                    prev_alpha,
                );
                prev_alpha = Some(b.alpha);
                check(&mut mm, t.tick, "alpha", logged.alpha, b.alpha);
                check(&mut mm, t.tick, "d", logged.d, b.d);
                check(&mut mm, t.tick, "delta", logged.delta, b.delta);
                check_twist(
                    &mut mm,
                    t.tick,
                    ["blended_cmd.vx", "blended_cmd.omega"],
                    &logged.blended_cmd,
                    &b.blended_cmd,
                );
                b.blended_cmd
            }
            (ControlMode::Bsc, None) => {
                check(&mut mm, t.tick, "alpha", f64::NAN, 0.0);
                t.user_cmd
            }
            (ControlMode::Manual, _) => t.user_cmd,
        };
        // ticks with a zero command are penalty ticks or collisions; the
        // limiter is only checked when something moved
        if !t.applied_cmd.is_zero() {
            let clamped = clamp_twist(&requested, &prev_applied, &rec.limits, rec.dt);
            check_twist(
                &mut mm,
                t.tick,
                ["applied_cmd.vx", "applied_cmd.omega"],
                &t.applied_cmd,
                &clamped,
            );
        }
        let (next_true, next_odom) = match ticks.get(i + 1) {
            Some(n) => (n.true_pose, n.odom_pose),
            None => (rec.final_true_pose, rec.final_odom_pose),
        };
        if !t.collision {
            let p = integrate_unicycle(&t.true_pose, &t.applied_cmd, rec.dt);
            check(&mut mm, t.tick, "true_pose.x", next_true.x, p.x);
            check(&mut mm, t.tick, "true_pose.y", next_true.y, p.y);
            check(&mut mm, t.tick, "true_pose.theta", next_true.theta, p.theta);
        } else if next_true != t.true_pose {
            check(&mut mm, t.tick, "collision_revert", 0.0, 1.0);
        }
        let o = update_odometry(&t.odom_pose, &t.applied_cmd, rec.dt, drift_rate);
        check(&mut mm, t.tick, "odom_pose.x", next_odom.x, o.x);
        check(&mut mm, t.tick, "odom_pose.y", next_odom.y, o.y);
        check(&mut mm, t.tick, "odom_pose.theta", next_odom.theta, o.theta);
        prev_applied = t.applied_cmd;
    }
    Ok(ReplayReport {
        scenario: rec.scenario.clone(),
        condition: rec.condition.label.clone(),
        seed: rec.condition.seed,
        ticks_checked: ticks.len(),
        mismatches: mm,
    })
}

/// Replays every record of a `runs.jsonl` file.
pub fn replay_file(path: &Path) -> Result<Vec<ReplayReport>, ReplayError> {
    let records = read_runs(path).map_err(|e| match e {
        crate::error::ReportError::Io(e) => ReplayError::Io(e),
        crate::error::ReportError::Parse { line, source } => ReplayError::Parse { line, source },
        other => ReplayError::Io(std::io::Error::other(other.to_string())),
    })?;
    records.iter().map(replay_record).collect()
}
