//! Sources of the operator command: a scripted pure-pursuit driver standing
//! in for a human, and a pass-through for live teleoperation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2D, Twist2D};

/// Anything that produces an operator command from what the operator perceives.
pub trait Operator: Send {
    fn command(&mut self, perceived_pose: &Pose2D, now: f64) -> Twist2D;

    /// Tells the operator how much control latency it experiences.
    fn set_latency(&mut self, _latency: f64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub lookahead: f64,
    pub reaction_delay: f64,
    pub heading_noise_sd: f64,
    pub cruise_speed: f64,
    /// Bearing to the lookahead point beyond which the driver turns in place.
    pub turn_in_place_angle: f64,
    pub turn_rate: f64,
    /// The driver backs off after commanding forward motion for this long
    /// without the perceived pose moving more than `stuck_distance`.
    pub stuck_time: f64,
    pub stuck_distance: f64,
    pub backoff_time: f64,
    pub backoff_speed: f64,
    /// Drivers slow down under latency: speeds scale by
    /// `1 / (1 + latency_slowdown * latency)`.
    pub latency_slowdown: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            lookahead: 0.8,
            reaction_delay: 0.25,
            heading_noise_sd: 0.1,
            cruise_speed: 1.0,
            turn_in_place_angle: std::f64::consts::FRAC_PI_2,
            turn_rate: 1.0,
            stuck_time: 3.0,
            stuck_distance: 0.05,
            backoff_time: 1.0,
            backoff_speed: 0.3,
            latency_slowdown: 1.5,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self, v_max: f64) -> Result<(), String> {
        if !(self.lookahead > 0.0) {
            return Err("operator: lookahead must be positive".into());
        }
        if !(self.reaction_delay >= 0.0) || !(self.heading_noise_sd >= 0.0) {
            return Err(
                "operator: reaction_delay and heading_noise_sd must be non-negative".into(),
            );
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed <= v_max) {
            return Err("operator: cruise_speed must lie in (0, v_max]".into());
        }
        if !(self.turn_in_place_angle > 0.0) || !(self.turn_rate >= 0.0) {
            return Err(
                "operator: turn_in_place_angle must be positive and turn_rate non-negative".into(),
            );
        }
        if !(self.stuck_time > 0.0) || !(self.stuck_distance >= 0.0) {
            return Err(
                "operator: stuck_time must be positive and stuck_distance non-negative".into(),
            );
        }
        if !(self.latency_slowdown >= 0.0) {
            return Err("operator: latency_slowdown must be non-negative".into());
        }
        if !(self.backoff_time >= 0.0)
            || !(self.backoff_speed >= 0.0 && self.backoff_speed <= v_max)
        {
            return Err(
                "operator: backoff_time must be non-negative and backoff_speed in [0, v_max]"
                    .into(),
            );
        }
        Ok(())
    }
}

/// Pure-pursuit driver following a fixed route with reaction delay and
/// heading-rate noise. Like a person at the keyboard it turns on the spot
/// when its target is behind it and reverses briefly when it finds itself
/// stuck against something.
#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    pub waypoints: Vec<Pose2D>,
    pub config: OperatorConfig,
    pub seed: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    history: VecDeque<(f64, Pose2D)>,
    /// Route segment the driver has progressed to; never moves backwards.
    segment: usize,
    /// Reacted poses while driving forward, for stuck detection.
    forward_track: VecDeque<(f64, Pose2D)>,
    backoff_until: f64,
    latency: f64,
}

impl ScriptedOperator {
    pub fn new(waypoints: Vec<Pose2D>, config: OperatorConfig, seed: u64) -> Self {
        assert!(
            !waypoints.is_empty(),
            "operator route needs at least one waypoint"
        );
        let noise = (config.heading_noise_sd > 0.0)
            .then(|| Normal::new(0.0, config.heading_noise_sd).expect("finite sd"));
        Self {
            waypoints,
            config,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            history: VecDeque::new(),
            segment: 0,
            forward_track: VecDeque::new(),
            backoff_until: f64::NEG_INFINITY,
            latency: 0.0,
        }
    }

    /// Pose the driver reacts to at `now`: the newest one at least
    /// `reaction_delay` old, or the oldest seen so far.
    fn reacted_pose(&mut self, perceived: &Pose2D, now: f64) -> Pose2D {
        self.history.push_back((now, *perceived));
        let cutoff = now - self.config.reaction_delay + 1e-9;
        while self.history.len() > 1 && self.history[1].0 <= cutoff {
            self.history.pop_front();
        }
        self.history[0].1
    }

    /// Closest point on the route at or after the current segment; returns
    /// `(segment, fraction)`.
    fn project(&mut self, x: f64, y: f64) -> (usize, f64) {
        let n = self.waypoints.len();
        if n == 1 {
            return (0, 0.0);
        }
        let mut best = (f64::INFINITY, self.segment, 0.0);
        for i in self.segment..n - 1 {
            let a = self.waypoints[i];
            let b = self.waypoints[i + 1];
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let f = if len2 > 0.0 {
                (((x - a.x) * dx + (y - a.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a.x + f * dx - x).hypot(a.y + f * dy - y);
            if d < best.0 {
                best = (d, i, f);
            }
        }
        self.segment = best.1;
        (best.1, best.2)
    }

    /// Point `lookahead` meters further along the route from the projection.
    fn lookahead_point(&mut self, pose: &Pose2D) -> (f64, f64) {
        let (mut seg, f) = self.project(pose.x, pose.y);
        let n = self.waypoints.len();
        if n == 1 {
            return (self.waypoints[0].x, self.waypoints[0].y);
        }
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        let mut px = a.x + f * (b.x - a.x);
        let mut py = a.y + f * (b.y - a.y);
        let mut remaining = self.config.lookahead;
        loop {
            let end = self.waypoints[seg + 1];
            let len = (end.x - px).hypot(end.y - py);
            if remaining <= len && len > 0.0 {
                return (
                    px + (end.x - px) * remaining / len,
                    py + (end.y - py) * remaining / len,
                );
            }
            remaining -= len;
            px = end.x;
            py = end.y;
            if seg + 2 >= n {
                return (px, py);
            }
            seg += 1;
        }
    }

    /// Speed factor the driver adopts for the latency it experiences.
    pub fn pace(&self) -> f64 {
        1.0 / (1.0 + self.config.latency_slowdown * self.latency)
    }

    /// True once forward driving has not moved the robot for `stuck_time`
    /// (plus the experienced latency).
    fn is_stuck(&mut self, pose: &Pose2D, now: f64) -> bool {
        self.forward_track.push_back((now, *pose));
        let horizon = now - self.config.stuck_time - self.latency;
        while self.forward_track.len() > 1 && self.forward_track[1].0 <= horizon + 1e-9 {
            self.forward_track.pop_front();
        }
        let (t0, p0) = self.forward_track[0];
        t0 <= horizon + 1e-9 && p0.distance_to(pose) < self.config.stuck_distance
    }

    /// One command toward the route, from the pose the driver perceived.
    pub fn scripted_step(&mut self, perceived_pose: &Pose2D, now: f64) -> Twist2D {
        let pose = self.reacted_pose(perceived_pose, now);
        let (lx, ly) = self.lookahead_point(&pose);
        let (bx, by) = pose.to_local(lx, ly);
        let bearing = by.atan2(bx);
        let noise = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        let pace = self.pace();
        let turn = pace * self.config.turn_rate * if bearing >= 0.0 { 1.0 } else { -1.0 };
        let backoff = -pace * self.config.backoff_speed;
        if now < self.backoff_until - 1e-9 {
            return Twist2D::new(backoff, turn + noise);
        }
        if bearing.abs() > self.config.turn_in_place_angle {
            self.forward_track.clear();
            return Twist2D::new(0.0, turn + noise);
        }
        if self.is_stuck(&pose, now) {
            self.forward_track.clear();
            self.backoff_until = now + self.config.backoff_time;
            return Twist2D::new(backoff, turn + noise);
        }
        let v = pace * self.config.cruise_speed;
        Twist2D::new(v, pure_pursuit_omega(&pose, lx, ly, v) + noise)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

/// `omega = v * 2 * y_lat / L^2` toward a target point.
pub fn pure_pursuit_omega(pose: &Pose2D, tx: f64, ty: f64, v: f64) -> f64 {
    let (lx, ly) = pose.to_local(tx, ty);
    let l2 = lx * lx + ly * ly;
    if l2 <= 0.0 {
        return 0.0;
    }
    v * 2.0 * ly / l2
}

impl Operator for ScriptedOperator {
    fn command(&mut self, perceived_pose: &Pose2D, now: f64) -> Twist2D {
        self.scripted_step(perceived_pose, now)
    }

    fn set_latency(&mut self, latency: f64) {
        self.latency = latency.max(0.0);
    }
}

/// Latest live command, or zero when nobody is driving.
pub fn live_step(bridge_latest: Option<Twist2D>) -> Twist2D {
    bridge_latest.unwrap_or(Twist2D::ZERO)
}

/// Operator fed by the teleoperation bridge.
#[derive(Debug, Clone, Default)]
pub struct LiveOperator {
    pub latest: Option<Twist2D>,
}

impl Operator for LiveOperator {
    fn command(&mut self, _perceived_pose: &Pose2D, _now: f64) -> Twist2D {
        live_step(self.latest)
    }
}

/// Operator that never touches the controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleOperator;

impl Operator for IdleOperator {
    fn command(&mut self, _perceived_pose: &Pose2D, _now: f64) -> Twist2D {
        Twist2D::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{integrate_unicycle, TICK_DT};

    fn quiet() -> OperatorConfig {
        OperatorConfig {
            lookahead: 1.0,
            reaction_delay: 0.0,
            heading_noise_sd: 0.0,
            ..OperatorConfig::default()
        }
    }

    #[test]
    fn pursuit_formula() {
        let w = pure_pursuit_omega(&Pose2D::default(), 1.0, 1.0, 1.0);
        assert!((w - 1.0).abs() < 1e-15);
        assert_eq!(pure_pursuit_omega(&Pose2D::default(), 2.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn dead_ahead_route_gives_zero_turn() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0)];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        assert_eq!(
            op.scripted_step(&Pose2D::default(), 0.0),
            Twist2D::new(1.0, 0.0)
        );
    }

    #[test]
    fn lookahead_follows_corner() {
        let route = vec![
            Pose2D::new(0.0, 0.0, 0.0),
            Pose2D::new(0.5, 0.0, 0.0),
            Pose2D::new(0.5, 5.0, 0.0),
        ];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        let (x, y) = op.lookahead_point(&Pose2D::default());
        assert!((x - 0.5).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0)];
        let cfg = OperatorConfig::default();
        let run = || {
            let mut op = ScriptedOperator::new(route.clone(), cfg, 42);
            (0..50)
                .map(|k| op.scripted_step(&Pose2D::new(k as f64 * 0.02, 0.1, 0.0), k as f64 * 0.02))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reaction_delay_uses_stale_pose() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0)];
        let cfg = OperatorConfig {
            reaction_delay: 0.1,
            ..quiet()
        };
        let mut op = ScriptedOperator::new(route, cfg, 1);
        // sits on the line for 0.1 s, then jumps left of it
        for k in 0..5 {
            op.scripted_step(&Pose2D::new(0.0, 0.0, 0.0), k as f64 * 0.02);
        }
        let cmd = op.scripted_step(&Pose2D::new(0.0, 1.0, 0.0), 0.1 - 0.02);
        assert_eq!(cmd.omega, 0.0);
        let cmd = op.scripted_step(&Pose2D::new(0.0, 1.0, 0.0), 0.1);
        assert_eq!(cmd.omega, 0.0);
        let cmd = op.scripted_step(&Pose2D::new(0.0, 1.0, 0.0), 0.2);
        assert!(cmd.omega < 0.0);
    }

    #[test]
    fn converges_to_straight_route() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(100.0, 0.0, 0.0)];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        let mut pose = Pose2D::new(0.0, 0.8, 0.0);
        for k in 0..1000 {
            let cmd = op.scripted_step(&pose, k as f64 * TICK_DT);
            let cmd = Twist2D::new(cmd.vx, cmd.omega.clamp(-2.0, 2.0));
            pose = integrate_unicycle(&pose, &cmd, TICK_DT);
        }
        assert!(pose.y.abs() < 0.05, "cross-track {}", pose.y);
    }

    #[test]
    fn turns_in_place_when_target_is_behind() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(-10.0, 0.0, 0.0)];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        let cmd = op.scripted_step(&Pose2D::new(0.0, -0.1, 0.0), 0.0);
        assert_eq!(cmd.vx, 0.0);
        assert_eq!(cmd.omega, 1.0);
    }

    #[test]
    fn backs_off_when_stuck() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0)];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        let cfg = op.config;
        let wall = Pose2D::new(1.0, 0.0, 0.0);
        let mut first_reverse = None;
        for k in 0..400 {
            let t = k as f64 * TICK_DT;
            let cmd = op.scripted_step(&wall, t);
            if cmd.vx < 0.0 && first_reverse.is_none() {
                first_reverse = Some(t);
            }
        }
        let t = first_reverse.expect("driver never backed off");
        assert!((t - cfg.stuck_time).abs() < 1e-9, "{t}");
        // a driver making progress never reverses
        let mut op = ScriptedOperator::new(
            vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(100.0, 0.0, 0.0)],
            quiet(),
            1,
        );
        for k in 0..1000 {
            let t = k as f64 * TICK_DT;
            assert!(op.scripted_step(&Pose2D::new(t, 0.0, 0.0), t).vx > 0.0);
        }
    }

    #[test]
    fn latency_slows_the_driver() {
        let route = vec![Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0)];
        let mut op = ScriptedOperator::new(route, quiet(), 1);
        assert_eq!(op.scripted_step(&Pose2D::default(), 0.0).vx, 1.0);
        op.set_latency(2.0);
        let expected = 1.0 / (1.0 + 2.0 * op.config.latency_slowdown);
        assert!((op.scripted_step(&Pose2D::default(), 0.02).vx - expected).abs() < 1e-15);
    }

    #[test]
    fn live_examples() {
        assert_eq!(live_step(None), Twist2D::ZERO);
        assert_eq!(
            live_step(Some(Twist2D::new(1.0, 0.0))),
            Twist2D::new(1.0, 0.0)
        );
        let mut op = LiveOperator {
            latest: Some(Twist2D::new(1.0, 0.0)),
        };
        op.latest = Some(Twist2D::ZERO);
        assert_eq!(op.command(&Pose2D::default(), 0.0), Twist2D::ZERO);
    }
}
