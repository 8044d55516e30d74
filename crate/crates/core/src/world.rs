//! Static map, moving obstacles, lidar sensing and collision checks.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmap::DistanceField;
use crate::error::{ScenarioError, WorldError};
use crate::geometry::Pose2D;
use crate::grid::{CellState, OccupancyGrid};

/// A disc that walks along a waypoint polyline at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    #[serde(rename = "radius")]
    pub footprint_radius: f64,
    pub waypoints: Vec<Pose2D>,
    pub speed: f64,
    #[serde(rename = "loop", default)]
    pub looped: bool,
    /// Seeded worlds start this obstacle up to this many seconds into its
    /// walk, so people are met at different moments from run to run.
    #[serde(default)]
    pub phase_jitter: f64,
}

/// Current position of a [`DynamicObstacle`] on its polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleState {
    pub x: f64,
    pub y: f64,
    /// Index of the waypoint currently being approached.
    pub target: usize,
    pub finished: bool,
}

impl ObstacleState {
    pub fn start_of(obstacle: &DynamicObstacle) -> Self {
        let first = obstacle.waypoints[0];
        Self {
            x: first.x,
            y: first.y,
            target: 1,
            finished: obstacle.waypoints.len() < 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub static_map: OccupancyGrid,
    pub start: Pose2D,
    pub goal: Pose2D,
    pub goal_tolerance: f64,
    pub dynamic_obstacles: Vec<DynamicObstacle>,
    pub robot_radius: f64,
    pub timeout: f64,
    /// Route the human operator intends to drive, in the map frame.
    pub route: Vec<Pose2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarParams {
    pub angle_min: f64,
    pub angle_max: f64,
    pub beam_count: usize,
    pub max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            angle_min: -PI,
            angle_max: PI,
            beam_count: 360,
            max_range: 5.0,
        }
    }
}

impl LidarParams {
    pub fn angle_increment(&self) -> f64 {
        (self.angle_max - self.angle_min) / self.beam_count as f64
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment()
    }

    /// Body-frame unit vector `(cos, sin)` of every beam.
    pub fn beam_directions(&self) -> Vec<(f64, f64)> {
        (0..self.beam_count)
            .map(|i| {
                let (s, c) = self.beam_angle(i).sin_cos();
                (c, s)
            })
            .collect()
    }
}

/// Beam directions for one set of lidar parameters, rotated by a heading
/// with a single `sin_cos` instead of one per beam.
#[derive(Debug, Clone)]
pub struct BeamTable {
    params: LidarParams,
    body: Vec<(f64, f64)>,
}

impl BeamTable {
    pub fn new(params: LidarParams) -> Self {
        Self {
            body: params.beam_directions(),
            params,
        }
    }

    pub fn params(&self) -> &LidarParams {
        &self.params
    }

    /// Unit vectors of every beam for a sensor heading `theta`.
    pub fn rotated(&self, theta: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (s, c) = theta.sin_cos();
        self.body
            .iter()
            .map(move |&(bx, by)| (c * bx - s * by, s * bx + c * by))
    }
}

/// Range scan in the sensor (robot body) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub angle_min: f64,
    pub angle_max: f64,
    pub beam_count: usize,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn params(&self) -> LidarParams {
        LidarParams {
            angle_min: self.angle_min,
            angle_max: self.angle_max,
            beam_count: self.beam_count,
            max_range: self.max_range,
        }
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.params().beam_angle(i)
    }

    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Smallest range reported for a beam that starts inside an obstacle.
pub const MIN_RANGE: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    resolution: f64,
    #[serde(default)]
    width: Option<f64>,
    #[serde(default)]
    height: Option<f64>,
    #[serde(default)]
    origin: Option<Point>,
    grid: GridSpec,
    start: Pose2D,
    goal: Pose2D,
    #[serde(default = "default_goal_tolerance")]
    goal_tolerance: f64,
    robot_radius: f64,
    #[serde(default)]
    obstacles: Vec<DynamicObstacle>,
    timeout: f64,
    #[serde(default)]
    route: Vec<Pose2D>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct Point {
    x: f64,
    y: f64,
}

/// Either ASCII rows (`#` occupied, `.` free, `?` unknown; first row is the
/// top of the map) or a list of occupied rectangles `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum GridSpec {
    Rows { rows: Vec<String> },
    Rects { rects: Vec<[f64; 4]> },
}

fn default_goal_tolerance() -> f64 {
    0.5
}

/// Parses and validates a scenario description.
pub fn load_scenario(json: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(json)?;
    build_scenario(file)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

fn positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::invalid(
            field,
            format!("must be positive, got {v}"),
        ))
    }
}

fn build_scenario(f: ScenarioFile) -> Result<Scenario, ScenarioError> {
    positive("resolution", f.resolution)?;
    positive("goal_tolerance", f.goal_tolerance)?;
    positive("robot_radius", f.robot_radius)?;
    positive("timeout", f.timeout)?;
    let origin = f
        .origin
        .map(|p| Pose2D::new(p.x, p.y, 0.0))
        .unwrap_or_default();
    let res = f.resolution;

    let map =
        match &f.grid {
            GridSpec::Rows { rows } => {
                if rows.is_empty() {
                    return Err(ScenarioError::invalid("grid.rows", "no rows"));
                }
                let w = rows[0].chars().count();
                let h = rows.len();
                if w == 0 {
                    return Err(ScenarioError::invalid("grid.rows[0]", "empty row"));
                }
                let check =
                    |field: &str, given: Option<f64>, cells: usize| -> Result<(), ScenarioError> {
                        if let Some(m) = given {
                            if ((m / res).round() as usize) != cells {
                                return Err(ScenarioError::invalid(
                            field,
                            format!("{m} m does not match {cells} grid cells at resolution {res}"),
                        ));
                            }
                        }
                        Ok(())
                    };
                check("width", f.width, w)?;
                check("height", f.height, h)?;
                let mut map = OccupancyGrid::new(res, w, h, origin, CellState::Free);
                for (r, row) in rows.iter().enumerate() {
                    if row.chars().count() != w {
                        return Err(ScenarioError::invalid(
                            format!("grid.rows[{r}]"),
                            format!("expected {w} cells, found {}", row.chars().count()),
                        ));
                    }
                    let iy = h - 1 - r;
                    for (ix, ch) in row.chars().enumerate() {
                        let state = match ch {
                            '#' => CellState::Occupied,
                            '.' | ' ' => CellState::Free,
                            '?' => CellState::Unknown,
                            other => {
                                return Err(ScenarioError::invalid(
                                    format!("grid.rows[{r}]"),
                                    format!("unexpected cell character {other:?}"),
                                ))
                            }
                        };
                        map.set_state(ix, iy, state);
                    }
                }
                map
            }
            GridSpec::Rects { rects } => {
                let width = f
                    .width
                    .ok_or_else(|| ScenarioError::invalid("width", "required with rect grids"))?;
                let height = f
                    .height
                    .ok_or_else(|| ScenarioError::invalid("height", "required with rect grids"))?;
                positive("width", width)?;
                positive("height", height)?;
                let w = (width / res).round() as usize;
                let h = (height / res).round() as usize;
                let mut map = OccupancyGrid::new(res, w, h, origin, CellState::Free);
                for (i, r) in rects.iter().enumerate() {
                    if r.iter().any(|v| !v.is_finite()) {
                        return Err(ScenarioError::invalid(
                            format!("grid.rects[{i}]"),
                            "non-finite corner",
                        ));
                    }
                    map.fill_rect(r[0], r[1], r[2], r[3]);
                }
                map
            }
        };

    for (i, ob) in f.obstacles.iter().enumerate() {
        positive(&format!("obstacles[{i}].radius"), ob.footprint_radius)?;
        if ob.waypoints.is_empty() {
            return Err(ScenarioError::invalid(
                format!("obstacles[{i}].waypoints"),
                "needs at least one waypoint",
            ));
        }
        if !(ob.speed >= 0.0 && ob.speed.is_finite()) {
            return Err(ScenarioError::invalid(
                format!("obstacles[{i}].speed"),
                "must be non-negative",
            ));
        }
        if !(ob.phase_jitter >= 0.0 && ob.phase_jitter.is_finite()) {
            return Err(ScenarioError::invalid(
                format!("obstacles[{i}].phase_jitter"),
                "must be non-negative",
            ));
        }
    }

    let route = if f.route.is_empty() {
        vec![f.start, f.goal]
    } else {
        f.route.clone()
    };

    let scenario = Scenario {
        name: f.name,
        static_map: map,
        start: f.start,
        goal: f.goal,
        goal_tolerance: f.goal_tolerance,
        dynamic_obstacles: f.obstacles,
        robot_radius: f.robot_radius,
        timeout: f.timeout,
        route,
    };

    let world = World::new(scenario.clone());
    for (field, pose) in [("start", scenario.start), ("goal", scenario.goal)] {
        if scenario.static_map.world_to_cell(pose.x, pose.y).is_none() {
            return Err(ScenarioError::invalid(field, "outside the map"));
        }
        if world.check_collision(&pose, scenario.robot_radius) {
            return Err(ScenarioError::invalid(
                field,
                "in collision with an obstacle",
            ));
        }
    }
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// World state

/// Scenario plus the moving state of its dynamic obstacles.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    /// Distance field of the static map, used to skip free space when casting.
    static_field: DistanceField,
    beams: BeamTable,
    pub obstacles: Vec<ObstacleState>,
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        let obstacles = scenario
            .dynamic_obstacles
            .iter()
            .map(ObstacleState::start_of)
            .collect();
        Self {
            static_field: DistanceField::compute(&scenario.static_map),
            beams: BeamTable::new(LidarParams::default()),
            scenario,
            obstacles,
        }
    }

    /// Like [`World::new`], but obstacles with a `phase_jitter` start a
    /// seed-dependent time into their walk.
    pub fn seeded(scenario: Scenario, seed: u64) -> Self {
        let mut world = Self::new(scenario);
        // separate stream from the operator's so the two never correlate
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        for (state, ob) in world
            .obstacles
            .iter_mut()
            .zip(&world.scenario.dynamic_obstacles)
        {
            if ob.phase_jitter > 0.0 {
                let t: f64 = rng.random_range(0.0..ob.phase_jitter);
                advance_obstacle(state, ob, t);
            }
        }
        world
    }

    /// Precomputes beam directions for the lidar that will be cast most often.
    pub fn set_lidar(&mut self, params: LidarParams) {
        if *self.beams.params() != params {
            self.beams = BeamTable::new(params);
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn map(&self) -> &OccupancyGrid {
        &self.scenario.static_map
    }

    /// Current obstacle discs as `(x, y, radius)`.
    pub fn obstacle_discs(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.obstacles
            .iter()
            .zip(&self.scenario.dynamic_obstacles)
            .map(|(s, o)| (s.x, s.y, o.footprint_radius))
    }

    pub fn step_dynamic_obstacles(&mut self, dt: f64) {
        for (state, ob) in self
            .obstacles
            .iter_mut()
            .zip(&self.scenario.dynamic_obstacles)
        {
            advance_obstacle(state, ob, dt);
        }
    }

    /// Casts every beam of `params` from `true_pose` against the static map and obstacle discs.
    pub fn raycast_scan(
        &self,
        true_pose: &Pose2D,
        params: &LidarParams,
    ) -> Result<LidarScan, WorldError> {
        if self.beams.params() == params {
            self.raycast_with(true_pose, &self.beams)
        } else {
            self.raycast_with(true_pose, &BeamTable::new(*params))
        }
    }

    pub fn raycast_with(
        &self,
        true_pose: &Pose2D,
        beams: &BeamTable,
    ) -> Result<LidarScan, WorldError> {
        let map = self.map();
        if map.world_to_cell(true_pose.x, true_pose.y).is_none() {
            return Err(WorldError::PoseOutOfBounds {
                x: true_pose.x,
                y: true_pose.y,
            });
        }
        let params = beams.params();
        let mut ranges = Vec::with_capacity(params.beam_count);
        for (dx, dy) in beams.rotated(true_pose.theta) {
            let mut range = self.static_range(true_pose.x, true_pose.y, dx, dy, params.max_range);
            for (cx, cy, r) in self.obstacle_discs() {
                if let Some(t) = ray_circle(true_pose.x, true_pose.y, dx, dy, cx, cy, r) {
                    range = range.min(t);
                }
            }
            ranges.push(range.max(MIN_RANGE));
        }
        Ok(LidarScan {
            angle_min: params.angle_min,
            angle_max: params.angle_max,
            beam_count: params.beam_count,
            ranges,
            max_range: params.max_range,
        })
    }

    /// Ray parameter where the ray first enters an occupied map cell, or
    /// `max_range`. Free space is skipped in steps bounded by the static
    /// distance field (center distance less one cell diagonal never reaches
    /// into an occupied cell), then the last stretch is walked cell by cell.
    fn static_range(&self, x: f64, y: f64, dx: f64, dy: f64, max_range: f64) -> f64 {
        let map = self.map();
        let diag = map.resolution() * std::f64::consts::SQRT_2;
        let mut t0 = 0.0;
        loop {
            let (px, py) = (x + dx * t0, y + dy * t0);
            let Some((ix, iy)) = map.world_to_cell(px, py) else {
                return max_range;
            };
            let step = self.static_field.distance_at_cell(ix, iy) - diag;
            if step < 2.0 * map.resolution() {
                break;
            }
            t0 += step;
            if t0 >= max_range {
                return max_range;
            }
        }
        let (px, py) = (x + dx * t0, y + dy * t0);
        for cell in map.traverse(px, py, dx, dy, max_range - t0) {
            if map.is_occupied(cell.ix, cell.iy) {
                return t0 + cell.t_enter;
            }
        }
        max_range
    }

    /// True iff an occupied cell or obstacle disc comes closer than `robot_radius` to the pose.
    pub fn check_collision(&self, pose: &Pose2D, robot_radius: f64) -> bool {
        static_collision(self.map(), pose.x, pose.y, robot_radius)
            || self
                .obstacle_discs()
                .any(|(cx, cy, r)| (pose.x - cx).hypot(pose.y - cy) - r < robot_radius)
    }
}

fn static_collision(map: &OccupancyGrid, x: f64, y: f64, radius: f64) -> bool {
    let res = map.resolution();
    let o = map.origin();
    let lo_x = (((x - radius - o.x) / res).floor() as i64).max(0);
    let hi_x = (((x + radius - o.x) / res).floor() as i64).min(map.width() as i64 - 1);
    let lo_y = (((y - radius - o.y) / res).floor() as i64).max(0);
    let hi_y = (((y + radius - o.y) / res).floor() as i64).min(map.height() as i64 - 1);
    for iy in lo_y..=hi_y {
        for ix in lo_x..=hi_x {
            let (ix, iy) = (ix as usize, iy as usize);
            if map.is_occupied(ix, iy) && map.distance_to_cell(x, y, ix, iy) < radius {
                return true;
            }
        }
    }
    false
}

/// Smallest non-negative `t` with `|p + t d - c| = r`, for unit `d`.
/// Returns `Some(0)` when the origin is inside the disc.
pub fn ray_circle(px: f64, py: f64, dx: f64, dy: f64, cx: f64, cy: f64, r: f64) -> Option<f64> {
    let fx = px - cx;
    let fy = py - cy;
    let c = fx * fx + fy * fy - r * r;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = fx * dx + fy * dy;
    let disc = b * b - c;
    if disc < 0.0 || b >= 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

fn advance_obstacle(state: &mut ObstacleState, ob: &DynamicObstacle, dt: f64) {
    let n = ob.waypoints.len();
    if state.finished || ob.speed <= 0.0 || n < 2 {
        return;
    }
    let mut remaining = ob.speed * dt;
    // bounded so a degenerate looped polyline (all waypoints equal) terminates
    let mut hops = 0;
    while remaining > 0.0 && hops <= 2 * n + 1 {
        let wp = ob.waypoints[state.target];
        let seg = (wp.x - state.x).hypot(wp.y - state.y);
        if remaining < seg {
            state.x += (wp.x - state.x) * remaining / seg;
            state.y += (wp.y - state.y) * remaining / seg;
            return;
        }
        state.x = wp.x;
        state.y = wp.y;
        remaining -= seg;
        if seg > 0.0 {
            hops = 0;
        } else {
            hops += 1;
        }
        if state.target + 1 < n {
            state.target += 1;
        } else if ob.looped {
            state.target = 0;
        } else {
            state.finished = true;
            return;
        }
    }
}
