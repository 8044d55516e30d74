//! Unicycle integration for the true pose and the drifting odometry estimate.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2D, Twist2D};

/// Below this turn rate the straight-line update is used.
pub const STRAIGHT_EPS: f64 = 1e-6;

/// Fixed control and physics period (50 Hz).
pub const TICK_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_lin: f64,
    pub a_ang: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 2.0,
            a_lin: 1.5,
            a_ang: 4.0,
        }
    }
}

impl KinematicLimits {
    pub fn is_valid(&self) -> bool {
        [self.v_max, self.omega_max, self.a_lin, self.a_ang]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub true_pose: Pose2D,
    pub odom_pose: Pose2D,
    pub current_twist: Twist2D,
    pub time: f64,
}

impl RobotState {
    pub fn at(pose: Pose2D) -> Self {
        Self {
            true_pose: pose,
            odom_pose: pose,
            current_twist: Twist2D::ZERO,
            time: 0.0,
        }
    }
}

/// Exact integration of a constant twist over `dt`.
pub fn integrate_unicycle(pose: &Pose2D, twist: &Twist2D, dt: f64) -> Pose2D {
    let v = twist.vx;
    let w = twist.omega;
    let th = pose.theta;
    if w.abs() < STRAIGHT_EPS {
        let (s, c) = th.sin_cos();
        return Pose2D::new(pose.x + v * c * dt, pose.y + v * s * dt, th + w * dt);
    }
    let th1 = th + w * dt;
    let r = v / w;
    Pose2D::new(
        pose.x + r * (th1.sin() - th.sin()),
        pose.y - r * (th1.cos() - th.cos()),
        th1,
    )
}

/// Forward-Euler step, kept for convergence checks.
pub fn integrate_euler(pose: &Pose2D, twist: &Twist2D, dt: f64) -> Pose2D {
    let (s, c) = pose.theta.sin_cos();
    Pose2D::new(
        pose.x + twist.vx * c * dt,
        pose.y + twist.vx * s * dt,
        pose.theta + twist.omega * dt,
    )
}

fn clamp_axis(request: f64, prev: f64, max: f64, accel: f64, dt: f64) -> f64 {
    let lo = prev - accel * dt;
    let hi = prev + accel * dt;
    request.max(lo).min(hi).clamp(-max, max)
}

/// Limits a requested twist to the velocity bounds and to what `prev` can reach in `dt`.
/// When the two sets are disjoint the velocity bound wins.
pub fn clamp_twist(twist: &Twist2D, prev: &Twist2D, limits: &KinematicLimits, dt: f64) -> Twist2D {
    Twist2D {
        vx: clamp_axis(twist.vx, prev.vx, limits.v_max, limits.a_lin, dt),
        vy: 0.0,
        omega: clamp_axis(twist.omega, prev.omega, limits.omega_max, limits.a_ang, dt),
    }
}

/// Integrates odometry with a heading-rate bias of `drift_rate`.
pub fn update_odometry(odom_pose: &Pose2D, twist: &Twist2D, dt: f64, drift_rate: f64) -> Pose2D {
    let biased = Twist2D {
        omega: twist.omega + drift_rate,
        ..*twist
    };
    integrate_unicycle(odom_pose, &biased, dt)
}
