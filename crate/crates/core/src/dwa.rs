//! Dynamic window approach local planner: the autonomous agent.
//!
//! The agent sees only the rolling costmap and its own odometry. The goal is
//! handed over once in map coordinates and used as-is in the odometry frame,
//! so odometry drift corrupts the agent's bearing to the goal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::costmap::LocalCostmap;
use crate::geometry::{normalize_angle, Pose2D, Twist2D};
use crate::kinematics::{KinematicLimits, RobotState, STRAIGHT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwaWeights {
    pub heading: f64,
    pub clearance: f64,
    pub velocity: f64,
}

impl Default for DwaWeights {
    fn default() -> Self {
        Self {
            heading: 0.6,
            clearance: 0.25,
            velocity: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwaConfig {
    pub v_samples: usize,
    pub omega_samples: usize,
    pub horizon: f64,
    pub sim_dt: f64,
    pub weights: DwaWeights,
    pub limits: KinematicLimits,
}

impl Default for DwaConfig {
    fn default() -> Self {
        Self {
            v_samples: 11,
            omega_samples: 21,
            horizon: 1.5,
            sim_dt: 0.1,
            weights: DwaWeights::default(),
            limits: KinematicLimits::default(),
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.v_samples < 3 || self.omega_samples < 3 {
            return Err("dwa: need at least 3 samples per axis".into());
        }
        if !(self.sim_dt > 0.0 && self.horizon > self.sim_dt) {
            return Err("dwa: require horizon > sim_dt > 0".into());
        }
        let w = self.weights;
        if [w.heading, w.clearance, w.velocity]
            .iter()
            .any(|v| *v < 0.0 || !v.is_finite())
            || w.heading + w.clearance + w.velocity == 0.0
        {
            return Err("dwa: weights must be non-negative and not all zero".into());
        }
        if !self.limits.is_valid() {
            return Err("dwa: kinematic limits must be positive".into());
        }
        Ok(())
    }
}

/// Robot footprint used for feasibility and the clearance term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub robot_radius: f64,
    pub inflation_radius: f64,
}

/// Anything that can report distance to the nearest obstacle at a point.
pub trait ClearanceQuery {
    fn clearance_at(&self, x: f64, y: f64) -> f64;
}

impl ClearanceQuery for LocalCostmap {
    /// Conservative (never overestimating) clearance; unseen space beyond the window is free.
    fn clearance_at(&self, x: f64, y: f64) -> f64 {
        self.field()
            .clearance_lower_bound(x, y)
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityWindow {
    pub v: (f64, f64),
    pub omega: (f64, f64),
}

fn window_axis(current: f64, accel: f64, lo_abs: f64, hi_abs: f64, dt: f64) -> (f64, f64) {
    let lo = (current - accel * dt).max(lo_abs);
    let hi = (current + accel * dt).min(hi_abs);
    if lo <= hi {
        (lo, hi)
    } else if current + accel * dt < lo_abs {
        (lo_abs, lo_abs)
    } else {
        (hi_abs, hi_abs)
    }
}

/// Velocities reachable from `current` within `dt`, intersected with the
/// absolute bounds `[0, v_max] x [-omega_max, omega_max]`.
pub fn dynamic_window(current: &Twist2D, limits: &KinematicLimits, dt: f64) -> VelocityWindow {
    VelocityWindow {
        v: window_axis(current.vx, limits.a_lin, 0.0, limits.v_max, dt),
        omega: window_axis(
            current.omega,
            limits.a_ang,
            -limits.omega_max,
            limits.omega_max,
            dt,
        ),
    }
}

fn rollout_steps(horizon: f64, sim_dt: f64) -> usize {
    (horizon / sim_dt).round().max(1.0) as usize
}

/// Constant-twist forward simulation; the start pose is not included.
pub fn rollout(odom_pose: &Pose2D, v: f64, omega: f64, horizon: f64, sim_dt: f64) -> Vec<Pose2D> {
    let mut out = Vec::new();
    rollout_into(
        odom_pose,
        v,
        omega,
        rollout_steps(horizon, sim_dt),
        sim_dt,
        &mut out,
    );
    out
}

/// Samples the exact arc at every step. The heading vector is advanced by a
/// fixed rotation, so each trajectory costs one `sin_cos` rather than four
/// trig calls per step.
fn rollout_into(p0: &Pose2D, v: f64, omega: f64, steps: usize, dt: f64, out: &mut Vec<Pose2D>) {
    out.clear();
    let (s0, c0) = p0.theta.sin_cos();
    if omega.abs() < STRAIGHT_EPS {
        for k in 1..=steps {
            let t = k as f64 * dt;
            out.push(Pose2D::new(
                p0.x + v * c0 * t,
                p0.y + v * s0 * t,
                p0.theta + omega * t,
            ));
        }
        return;
    }
    let (sd, cd) = (omega * dt).sin_cos();
    let r = v / omega;
    let (mut s, mut c) = (s0, c0);
    for k in 1..=steps {
        (s, c) = (s * cd + c * sd, c * cd - s * sd);
        out.push(Pose2D::new(
            p0.x + r * (s - s0),
            p0.y - r * (c - c0),
            p0.theta + omega * k as f64 * dt,
        ));
    }
}

/// Normalized score of a trajectory driven at speed `v`, or `None` if any
/// pose comes closer than the robot radius to an obstacle.
pub fn score_trajectory(
    traj: &[Pose2D],
    v: f64,
    goal_in_odom: &Pose2D,
    costmap: &impl ClearanceQuery,
    weights: &DwaWeights,
    footprint: &Footprint,
    v_max: f64,
) -> Option<f64> {
    let end = traj.last()?;
    let mut min_clear = f64::INFINITY;
    for p in traj {
        let c = costmap.clearance_at(p.x, p.y);
        if c < footprint.robot_radius {
            return None;
        }
        min_clear = min_clear.min(c);
    }
    let bearing = (goal_in_odom.y - end.y).atan2(goal_in_odom.x - end.x);
    let heading_err = normalize_angle(bearing - end.theta).abs();
    let clearance_term = if footprint.inflation_radius > 0.0 {
        (min_clear / footprint.inflation_radius).min(1.0)
    } else {
        1.0
    };
    Some(
        weights.heading * (1.0 - heading_err / PI)
            + weights.clearance * clearance_term
            + weights.velocity * (v / v_max),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwaOutput {
    pub cmd: Twist2D,
    pub trajectory: Vec<Pose2D>,
    /// `None` when every candidate was infeasible and the recovery rotation was chosen.
    pub score: Option<f64>,
}

impl DwaOutput {
    pub fn is_recovery(&self) -> bool {
        self.score.is_none()
    }
}

/// Samples `n` evenly spaced values over `[lo, hi]`.
pub fn sample_axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Picks the best feasible `(v, omega)` sample. Ties keep the lowest index
/// (v outer, omega inner). If nothing is feasible the agent rotates in place
/// at half the turn-rate limit.
pub fn plan_dwa(
    state: &RobotState,
    goal: &Pose2D,
    costmap: &impl ClearanceQuery,
    footprint: &Footprint,
    config: &DwaConfig,
) -> DwaOutput {
    let window = dynamic_window(&state.current_twist, &config.limits, config.sim_dt);
    let steps = rollout_steps(config.horizon, config.sim_dt);
    let mut best: Option<(f64, Twist2D, Vec<Pose2D>)> = None;
    let mut traj = Vec::with_capacity(steps);
    for v in sample_axis(window.v.0, window.v.1, config.v_samples) {
        for w in sample_axis(window.omega.0, window.omega.1, config.omega_samples) {
            rollout_into(&state.odom_pose, v, w, steps, config.sim_dt, &mut traj);
            let Some(score) = score_trajectory(
                &traj,
                v,
                goal,
                costmap,
                &config.weights,
                footprint,
                config.limits.v_max,
            ) else {
                continue;
            };
            match &mut best {
                Some((s, cmd, t)) if score > *s => {
                    (*s, *cmd) = (score, Twist2D::new(v, w));
                    t.clone_from(&traj);
                }
                Some(_) => {}
                None => best = Some((score, Twist2D::new(v, w), traj.clone())),
            }
        }
    }
    match best {
        Some((score, cmd, trajectory)) => DwaOutput {
            cmd,
            trajectory,
            score: Some(score),
        },
        None => {
            let cmd = Twist2D::new(0.0, config.limits.omega_max / 2.0);
            DwaOutput {
                cmd,
                trajectory: rollout(
                    &state.odom_pose,
                    0.0,
                    cmd.omega,
                    config.horizon,
                    config.sim_dt,
                ),
                score: None,
            }
        }
    }
}
