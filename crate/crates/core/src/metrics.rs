//! Per-run metrics and the run log record.

use serde::{Deserialize, Serialize};

use crate::blend::{BlendParams, DeltaMode};
use crate::geometry::{Pose2D, Twist2D};
use crate::kinematics::KinematicLimits;
use crate::sim::DriftMode;
use crate::world::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Manual,
    Bsc,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::Manual => "manual",
            ControlMode::Bsc => "bsc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Goal,
    Timeout,
    CollisionAbort,
}

/// Experimental condition of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub mode: ControlMode,
    /// Operator input latency actually applied, seconds.
    pub delay: f64,
    /// Odometry heading-rate bias, rad/s (or a fixed heading offset in rad
    /// when the static-offset drift mode is selected).
    pub drift: f64,
    pub seed: u64,
}

/// Arbitration values logged for a blended tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendLog {
    pub alpha: f64,
    pub d: f64,
    pub delta: f64,
    pub blended_cmd: Twist2D,
}

/// Inputs and outputs of one control tick. Poses are those at the start of
/// the tick, i.e. what the controllers saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    /// Operator command after the latency channel.
    pub user_cmd: Twist2D,
    pub agent_cmd: Twist2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blend: Option<BlendLog>,
    /// Command executed after limiting (zero while a collision penalty runs).
    pub applied_cmd: Twist2D,
    pub collision: bool,
}

/// Everything a finished simulation hands to [`finalize_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub ticks: Vec<TickRecord>,
    pub final_true_pose: Pose2D,
    pub final_odom_pose: Pose2D,
    pub status: RunStatus,
    pub end_time: f64,
    pub dt: f64,
    pub blend_params: BlendParams,
    pub delta_mode: DeltaMode,
    pub drift_mode: DriftMode,
    pub limits: KinematicLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub condition: Condition,
    /// Position of this cell in the randomized execution order.
    #[serde(default)]
    pub run_order: usize,
    pub status: RunStatus,
    /// `null` when the run did not reach the goal.
    pub time_to_completion: Option<f64>,
    pub odometric_distance: f64,
    pub true_distance: f64,
    pub collision_count: u32,
    pub min_alpha: Option<f64>,
    pub max_alpha: Option<f64>,
    pub ticks: u64,
    pub dt: f64,
    pub goal: Pose2D,
    pub blend_params: BlendParams,
    pub delta_mode: DeltaMode,
    #[serde(default)]
    pub drift_mode: DriftMode,
    pub limits: KinematicLimits,
    pub final_true_pose: Pose2D,
    pub final_odom_pose: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_log: Option<Vec<TickRecord>>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Goal
    }
}

/// Sum of consecutive segment lengths.
pub fn path_length(poses: &[Pose2D]) -> f64 {
    poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
}

pub fn finalize_run(
    log: RunLog,
    scenario: &Scenario,
    condition: &Condition,
    keep_ticks: bool,
) -> RunRecord {
    let mut true_path: Vec<Pose2D> = log.ticks.iter().map(|t| t.true_pose).collect();
    let mut odom_path: Vec<Pose2D> = log.ticks.iter().map(|t| t.odom_pose).collect();
    true_path.push(log.final_true_pose);
    odom_path.push(log.final_odom_pose);
    let alphas = log.ticks.iter().filter_map(|t| t.blend.map(|b| b.alpha));
    let (min_alpha, max_alpha) =
        alphas.fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), a| {
            (
                Some(lo.map_or(a, |v| v.min(a))),
                Some(hi.map_or(a, |v| v.max(a))),
            )
        });
    let collision_count = log.ticks.iter().filter(|t| t.collision).count() as u32;
    RunRecord {
        scenario: scenario.name.clone(),
        condition: condition.clone(),
        run_order: 0,
        status: log.status,
        time_to_completion: (log.status == RunStatus::Goal).then_some(log.end_time),
        odometric_distance: path_length(&odom_path),
        true_distance: path_length(&true_path),
        collision_count,
        min_alpha,
        max_alpha,
        ticks: log.ticks.len() as u64,
        dt: log.dt,
        goal: scenario.goal,
        blend_params: log.blend_params,
        delta_mode: log.delta_mode,
        drift_mode: log.drift_mode,
        limits: log.limits,
        final_true_pose: log.final_true_pose,
        final_odom_pose: log.final_odom_pose,
        tick_log: keep_ticks.then_some(log.ticks),
    }
}
