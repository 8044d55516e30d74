//! The composed 50 Hz shared-control loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::blend::{blend_step, BlendParams, BlendState, DeltaMode};
use crate::costmap::{CostmapConfig, LocalCostmap};
use crate::delay::DelayBuffer;
use crate::dwa::{plan_dwa, DwaConfig, DwaOutput, Footprint};
use crate::error::DelayError;
use crate::geometry::{distance_to_goal, Pose2D, Twist2D};
use crate::kinematics::{
    clamp_twist, integrate_unicycle, update_odometry, KinematicLimits, RobotState, TICK_DT,
};
use crate::metrics::{BlendLog, ControlMode, RunLog, RunStatus, TickRecord};
use crate::operator::Operator;
use crate::world::{LidarParams, LidarScan, Scenario, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Additive heading-rate bias in the odometry integrator.
    #[default]
    Rate,
    /// One-time heading offset of the odometry frame (`drift` read as radians).
    StaticOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionPolicy {
    /// Log the contact, stop the robot for the penalty period, keep going.
    #[default]
    Penalty,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: ControlMode,
    pub delay: f64,
    pub drift: f64,
    pub drift_mode: DriftMode,
    /// Age of the state shown to the operator, seconds.
    pub feedback_delay: f64,
    pub blend: BlendParams,
    pub delta_mode: DeltaMode,
    pub limits: KinematicLimits,
    pub dwa: DwaConfig,
    pub costmap: CostmapConfig,
    pub lidar: LidarParams,
    pub collision_policy: CollisionPolicy,
    pub collision_penalty: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::Bsc,
            delay: 0.0,
            drift: 0.0,
            drift_mode: DriftMode::Rate,
            feedback_delay: 0.0,
            blend: BlendParams::default(),
            delta_mode: DeltaMode::FullTwist,
            limits: KinematicLimits::default(),
            dwa: DwaConfig::default(),
            costmap: CostmapConfig::default(),
            lidar: LidarParams::default(),
            collision_policy: CollisionPolicy::Penalty,
            collision_penalty: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.delay >= 0.0) || !(self.feedback_delay >= 0.0) {
            return Err("delays must be non-negative".into());
        }
        if !self.drift.is_finite() {
            return Err("drift must be finite".into());
        }
        if !self.limits.is_valid() {
            return Err("kinematic limits must be positive".into());
        }
        if !self.costmap.is_valid() {
            return Err("costmap: need resolution > 0 and size > 2 * inflation_radius".into());
        }
        if self.lidar.beam_count == 0 || !(self.lidar.max_range > 0.0) {
            return Err("lidar: need at least one beam and a positive range".into());
        }
        if !(self.collision_penalty >= 0.0) {
            return Err("collision_penalty must be non-negative".into());
        }
        self.blend.validate()?;
        self.dwa.validate()
    }
}

/// Event emitted by the loop, used by the live bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunEventKind {
    Start,
    Goal,
    Collision,
    Timeout,
}

/// Output of one tick, including the full arbitration state for telemetry.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub record: TickRecord,
    pub blend: Option<BlendState>,
    pub agent: DwaOutput,
    pub events: Vec<RunEventKind>,
}

pub struct Simulation {
    config: SimConfig,
    world: World,
    state: RobotState,
    costmap: LocalCostmap,
    delay: DelayBuffer,
    /// `None` when commands are pushed from outside (live teleoperation).
    operator: Option<Box<dyn Operator>>,
    footprint: Footprint,
    tick: u64,
    status: RunStatus,
    penalty_until: f64,
    prev_alpha: Option<f64>,
    odom_history: VecDeque<(f64, Pose2D)>,
    log: Vec<TickRecord>,
    last_scan: Option<LidarScan>,
}

impl Simulation {
    pub fn new(
        scenario: Scenario,
        config: SimConfig,
        operator: Box<dyn Operator>,
    ) -> Result<Self, DelayError> {
        Self::build(World::new(scenario), config, Some(operator))
    }

    /// Like [`Simulation::new`], with obstacle start phases drawn from `seed`.
    pub fn new_seeded(
        scenario: Scenario,
        config: SimConfig,
        operator: Box<dyn Operator>,
        seed: u64,
    ) -> Result<Self, DelayError> {
        Self::build(World::seeded(scenario, seed), config, Some(operator))
    }

    /// A simulation without an internal operator: commands arrive through
    /// [`Simulation::push_user_command`] stamped with their receipt time.
    pub fn live(scenario: Scenario, config: SimConfig, seed: u64) -> Result<Self, DelayError> {
        Self::build(World::seeded(scenario, seed), config, None)
    }

    fn build(
        mut world: World,
        mut config: SimConfig,
        mut operator: Option<Box<dyn Operator>>,
    ) -> Result<Self, DelayError> {
        let scenario = world.scenario();
        config.dwa.limits = config.limits;
        if let Some(op) = operator.as_mut() {
            op.set_latency(config.delay + config.feedback_delay);
        }
        let start = scenario.start;
        let mut state = RobotState::at(start);
        if config.drift_mode == DriftMode::StaticOffset {
            state.odom_pose = Pose2D::new(start.x, start.y, start.theta + config.drift);
        }
        let footprint = Footprint {
            robot_radius: scenario.robot_radius,
            inflation_radius: config.costmap.inflation_radius,
        };
        Ok(Self {
            costmap: LocalCostmap::new(config.costmap, &state.odom_pose),
            delay: DelayBuffer::new(config.delay)?,
            world: {
                world.set_lidar(config.lidar);
                world
            },
            state,
            operator,
            footprint,
            tick: 0,
            status: RunStatus::Running,
            penalty_until: f64::NEG_INFINITY,
            prev_alpha: None,
            odom_history: VecDeque::new(),
            log: Vec::new(),
            last_scan: None,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn costmap(&self) -> &LocalCostmap {
        &self.costmap
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 * TICK_DT
    }

    pub fn log(&self) -> &[TickRecord] {
        &self.log
    }

    pub fn last_scan(&self) -> Option<&LidarScan> {
        self.last_scan.as_ref()
    }

    pub fn operator_mut(&mut self) -> Option<&mut (dyn Operator + 'static)> {
        self.operator.as_deref_mut()
    }

    /// Queues an externally received operator command. Stamps must not go
    /// backwards; a command stamped after the current tick matures later.
    pub fn push_user_command(&mut self, cmd: Twist2D, stamp: f64) -> Result<(), DelayError> {
        self.delay.push_command(cmd, stamp)
    }

    pub fn set_mode(&mut self, mode: ControlMode) {
        self.config.mode = mode;
    }

    pub fn set_delay(&mut self, delay: f64) -> Result<(), DelayError> {
        self.delay.set_delay(delay)?;
        self.config.delay = delay;
        if let Some(op) = self.operator.as_mut() {
            op.set_latency(delay + self.config.feedback_delay);
        }
        Ok(())
    }

    fn perceived_pose(&mut self, now: f64) -> Pose2D {
        self.odom_history.push_back((now, self.state.odom_pose));
        let cutoff = now - self.config.feedback_delay + 1e-9;
        while self.odom_history.len() > 1 && self.odom_history[1].0 <= cutoff {
            self.odom_history.pop_front();
        }
        self.odom_history[0].1
    }

    /// Advances the loop by one tick. Does nothing once the run has ended.
    pub fn run_tick(&mut self) -> Option<TickOutput> {
        if self.status != RunStatus::Running {
            return None;
        }
        let dt = TICK_DT;
        let now = self.now();
        let mut events = Vec::new();
        if self.tick == 0 {
            events.push(RunEventKind::Start);
        }

        self.world.step_dynamic_obstacles(dt);
        // the robot always starts inside the map and collisions keep it there
        let scan = self
            .world
            .raycast_scan(&self.state.true_pose, &self.config.lidar)
            .expect("robot pose inside the map");
        self.costmap.update(&scan, &self.state.odom_pose);
        self.last_scan = Some(scan);

        let perceived = self.perceived_pose(now);
        if let Some(op) = self.operator.as_mut() {
            let raw_user = op.command(&perceived, now);
            self.delay
                .push_command(raw_user, now)
                .expect("tick stamps are monotonic");
        }
        let user_cmd = self.delay.sample_delayed(now);

        let goal = self.world.scenario().goal;
        let agent = plan_dwa(
            &self.state,
            &goal,
            &self.costmap,
            &self.footprint,
            &self.config.dwa,
        );

        let (requested, blend) = match self.config.mode {
            ControlMode::Manual => (user_cmd, None),
            ControlMode::Bsc => {
                let b = blend_step(
                    &user_cmd,
                    &agent.cmd,
                    &self.state.odom_pose,
                    &goal,
                    &self.config.blend,
                    self.config.delta_mode,
                    self.prev_alpha,
                );
                self.prev_alpha = Some(b.alpha);
                (b.blended_cmd, Some(b))
            }
        };

        let in_penalty = now < self.penalty_until - 1e-9;
        let mut applied = if in_penalty {
            Twist2D::ZERO
        } else {
            clamp_twist(
                &requested,
                &self.state.current_twist,
                &self.config.limits,
                dt,
            )
        };

        let mut collision = false;
        let mut next_true = integrate_unicycle(&self.state.true_pose, &applied, dt);
        if !in_penalty
            && self
                .world
                .check_collision(&next_true, self.world.scenario().robot_radius)
        {
            collision = true;
            events.push(RunEventKind::Collision);
            applied = Twist2D::ZERO;
            next_true = self.state.true_pose;
            self.penalty_until = now + dt + self.config.collision_penalty;
        }
        let drift_rate = match self.config.drift_mode {
            DriftMode::Rate => self.config.drift,
            DriftMode::StaticOffset => 0.0,
        };
        let next_odom = update_odometry(&self.state.odom_pose, &applied, dt, drift_rate);

        let record = TickRecord {
            tick: self.tick,
            t: now,
            true_pose: self.state.true_pose,
            odom_pose: self.state.odom_pose,
            user_cmd,
            agent_cmd: agent.cmd,
            blend: blend.map(|b| BlendLog {
                alpha: b.alpha,
                d: b.d,
                delta: b.delta,
                blended_cmd: b.blended_cmd,
            }),
            applied_cmd: applied,
            collision,
        };
        self.log.push(record.clone());

        self.state.true_pose = next_true;
        self.state.odom_pose = next_odom;
        self.state.current_twist = applied;
        self.tick += 1;
        self.state.time = self.now();

        if collision && self.config.collision_policy == CollisionPolicy::Abort {
            self.status = RunStatus::CollisionAbort;
        } else if distance_to_goal(&self.state.true_pose, &goal)
            <= self.world.scenario().goal_tolerance
        {
            self.status = RunStatus::Goal;
            events.push(RunEventKind::Goal);
        } else if self.state.time >= self.world.scenario().timeout - 1e-9 {
            self.status = RunStatus::Timeout;
            events.push(RunEventKind::Timeout);
        }

        Some(TickOutput {
            record,
            blend,
            agent,
            events,
        })
    }

    /// Runs until goal, timeout or abort.
    pub fn run_to_end(&mut self) {
        while self.run_tick().is_some() {}
    }

    /// Consumes the simulation into its log.
    pub fn into_log(self) -> RunLog {
        RunLog {
            ticks: self.log,
            final_true_pose: self.state.true_pose,
            final_odom_pose: self.state.odom_pose,
            status: self.status,
            end_time: self.state.time,
            dt: TICK_DT,
            blend_params: self.config.blend,
            delta_mode: self.config.delta_mode,
            drift_mode: self.config.drift_mode,
            limits: self.config.limits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{IdleOperator, OperatorConfig, ScriptedOperator};
    use crate::world::load_scenario;

    fn corridor(length: f64) -> Scenario {
        let json = format!(
            r#"{{"name":"open","resolution":0.05,"width":{w},"height":6.0,"grid":{{"rects":[]}},
            "start":{{"x":1.0,"y":3.0,"theta":0.0}},"goal":{{"x":{g},"y":3.0}},
            "robot_radius":0.2,"timeout":60.0}}"#,
            w = length,
            g = length - 1.0
        );
        load_scenario(&json).unwrap()
    }

    fn quiet_operator(s: &Scenario) -> Box<dyn Operator> {
        let cfg = OperatorConfig {
            heading_noise_sd: 0.0,
            reaction_delay: 0.0,
            ..OperatorConfig::default()
        };
        Box::new(ScriptedOperator::new(s.route.clone(), cfg, 7))
    }

    #[test]
    fn live_commands_mature_after_the_delay_and_hold() {
        let cfg = SimConfig {
            mode: ControlMode::Manual,
            delay: 0.1,
            ..SimConfig::default()
        };
        let mut sim = Simulation::live(corridor(10.0), cfg, 0).unwrap();
        let cmd = Twist2D::new(0.5, 0.0);
        sim.push_user_command(cmd, 0.0).unwrap();
        for _ in 0..10 {
            sim.run_tick();
        }
        let log = sim.log();
        // due at 0.1 s, i.e. tick 5; held afterwards with nothing new queued
        assert!(log[..5].iter().all(|t| t.user_cmd.is_zero()));
        assert!(log[5..].iter().all(|t| t.user_cmd == cmd));
        assert!(sim.push_user_command(Twist2D::ZERO, f64::NAN).is_err());
    }

    #[test]
    fn manual_straight_run_matches_closed_form() {
        let s = corridor(10.0);
        let cfg = SimConfig {
            mode: ControlMode::Manual,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(s.clone(), cfg.clone(), quiet_operator(&s)).unwrap();
        sim.run_to_end();
        assert_eq!(sim.status(), RunStatus::Goal);
        // 7.5 m to the tolerance circle at 1 m/s, plus the accel ramp v/(2a)
        let expected = 7.5 + cfg.limits.v_max / (2.0 * cfg.limits.a_lin);
        assert!(
            (sim.state().time - expected).abs() <= 0.05,
            "{}",
            sim.state().time
        );
    }

    #[test]
    fn blended_run_reaches_goal_in_open_corridor() {
        let s = corridor(10.0);
        let mut sim = Simulation::new(s.clone(), SimConfig::default(), quiet_operator(&s)).unwrap();
        sim.run_to_end();
        let log = sim.into_log();
        assert_eq!(log.status, RunStatus::Goal);
        assert!(log.ticks.iter().all(|t| !t.collision));
        for t in &log.ticks {
            let a = t.blend.unwrap().alpha;
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn idle_operator_far_from_goal_follows_agent_exactly() {
        let s = corridor(30.0);
        let mut sim = Simulation::new(s, SimConfig::default(), Box::new(IdleOperator)).unwrap();
        for _ in 0..200 {
            let out = sim.run_tick().unwrap();
            let b = out.blend.unwrap();
            if b.d >= 15.0 {
                assert_eq!(b.alpha, 0.0);
                assert_eq!(b.blended_cmd, out.agent.cmd);
            }
        }
        assert!(sim.state().true_pose.x > 3.0);
    }

    #[test]
    fn manual_mode_ignores_agent() {
        let s = corridor(30.0);
        let cfg = SimConfig {
            mode: ControlMode::Manual,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(s, cfg, Box::new(IdleOperator)).unwrap();
        for _ in 0..100 {
            let out = sim.run_tick().unwrap();
            assert!(!out.agent.cmd.is_zero() || out.record.tick == 0);
            assert_eq!(out.record.applied_cmd, Twist2D::ZERO);
        }
        assert_eq!(sim.state().true_pose, Pose2D::new(1.0, 3.0, 0.0));
    }

    #[test]
    fn collision_is_logged_and_penalised() {
        let json = r#"{"name":"wall","resolution":0.05,"width":6.0,"height":4.0,
            "grid":{"rects":[[3.0,0.0,3.2,4.0]]},
            "start":{"x":1.0,"y":2.0,"theta":0.0},"goal":{"x":5.0,"y":2.0},
            "robot_radius":0.2,"timeout":8.0}"#;
        let s = load_scenario(json).unwrap();
        let cfg = SimConfig {
            mode: ControlMode::Manual,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(s.clone(), cfg, quiet_operator(&s)).unwrap();
        sim.run_to_end();
        let log = sim.into_log();
        assert_eq!(log.status, RunStatus::Timeout);
        let hits: Vec<_> = log.ticks.iter().filter(|t| t.collision).collect();
        assert!(!hits.is_empty());
        // robot never penetrates, and waits at least the penalty between contacts
        for w in hits.windows(2) {
            assert!(w[1].t - w[0].t >= 1.0);
        }
        assert!(log.final_true_pose.x < 3.0 - 0.2);
    }

    #[test]
    fn static_offset_drift_rotates_odometry_once() {
        let s = corridor(10.0);
        let cfg = SimConfig {
            drift: 0.3,
            drift_mode: DriftMode::StaticOffset,
            ..SimConfig::default()
        };
        let sim = Simulation::new(s, cfg, Box::new(IdleOperator)).unwrap();
        assert!((sim.state().odom_pose.theta - 0.3).abs() < 1e-15);
    }
}
