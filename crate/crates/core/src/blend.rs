//! Blended shared control: arbitration weight and the blended command.
//!
//! `alpha = max(0, 1 - d/d0) * max(0, 1 - (delta/delta0)^2)` weights the
//! operator command; the robot follows `alpha * user + (1 - alpha) * agent`.
//!
//! The formula is implemented as written, which hands authority to the user as
//! the goal gets close. `BlendParams::inverted` flips that (alpha -> 1 - alpha)
//! for sensitivity experiments.

use serde::{Deserialize, Serialize};

use crate::geometry::{distance_to_goal, Pose2D, Twist2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendParams {
    pub d0: f64,
    pub delta0: f64,
    #[serde(default)]
    pub inverted: bool,
    /// Exponential smoothing factor for alpha in `[0, 1)`; `None` disables smoothing.
    #[serde(default)]
    pub smoothing: Option<f64>,
}

impl Default for BlendParams {
    fn default() -> Self {
        Self {
            d0: 15.0,
            delta0: 3.0,
            inverted: false,
            smoothing: None,
        }
    }
}

impl BlendParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.d0 > 0.0 && self.delta0 > 0.0) {
            return Err("blend: d0 and delta0 must be positive".into());
        }
        if let Some(s) = self.smoothing {
            if !(0.0..1.0).contains(&s) {
                return Err("blend: smoothing must lie in [0, 1)".into());
            }
        }
        Ok(())
    }
}

/// How the operator/agent command difference is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Euclidean norm of the `(vx, omega)` difference.
    #[default]
    FullTwist,
    /// `|omega_user - omega_agent|`.
    AngularOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendState {
    pub alpha: f64,
    pub d: f64,
    pub delta: f64,
    pub user_cmd: Twist2D,
    pub agent_cmd: Twist2D,
    pub blended_cmd: Twist2D,
}

pub fn command_difference(user: &Twist2D, agent: &Twist2D, mode: DeltaMode) -> f64 {
    match mode {
        DeltaMode::FullTwist => (user.vx - agent.vx).hypot(user.omega - agent.omega),
        DeltaMode::AngularOnly => (user.omega - agent.omega).abs(),
    }
}

pub fn compute_alpha(d: f64, delta: f64, params: &BlendParams) -> f64 {
    let distance_factor = (1.0 - d / params.d0).max(0.0);
    let ratio = delta / params.delta0;
    let agreement_factor = (1.0 - ratio * ratio).max(0.0);
    distance_factor * agreement_factor
}

/// Componentwise `alpha * user + (1 - alpha) * agent`.
pub fn blend(user: &Twist2D, agent: &Twist2D, alpha: f64) -> Twist2D {
    let mix = |u: f64, a: f64| alpha * u + (1.0 - alpha) * a;
    Twist2D {
        vx: mix(user.vx, agent.vx),
        vy: mix(user.vy, agent.vy),
        omega: mix(user.omega, agent.omega),
    }
}

/// Per-tick arbitration: goal distance in the odometry frame, command
/// difference, alpha (optionally inverted and smoothed against `prev_alpha`)
/// and the blended command.
pub fn blend_step(
    user: &Twist2D,
    agent: &Twist2D,
    odom_pose: &Pose2D,
    goal: &Pose2D,
    params: &BlendParams,
    mode: DeltaMode,
    prev_alpha: Option<f64>,
) -> BlendState {
    let d = distance_to_goal(odom_pose, goal);
    let delta = command_difference(user, agent, mode);
    let mut alpha = compute_alpha(d, delta, params);
    if params.inverted {
        alpha = 1.0 - alpha;
    }
    if let (Some(s), Some(prev)) = (params.smoothing, prev_alpha) {
        alpha = s * prev + (1.0 - s) * alpha;
    }
    BlendState {
        alpha,
        d,
        delta,
        user_cmd: *user,
        agent_cmd: *agent,
        blended_cmd: blend(user, agent, alpha),
    }
}
