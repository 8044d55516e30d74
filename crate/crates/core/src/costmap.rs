//! Rolling robot-centred costmap built from lidar scans in the odometry frame.
//!
//! The window only ever holds what the robot has seen recently from its
//! current neighbourhood; cells that scroll out of the window are forgotten.

use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::geometry::Pose2D;
use crate::grid::{cell_of, CellState, OccupancyGrid, LETHAL_COST};
use crate::world::{BeamTable, LidarScan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostmapConfig {
    /// Side of the square window, meters.
    pub size: f64,
    pub resolution: f64,
    pub inflation_radius: f64,
    /// Clear occupied cells that a later beam passes through.
    pub decay: bool,
}

impl Default for CostmapConfig {
    fn default() -> Self {
        Self {
            size: 6.0,
            resolution: 0.05,
            inflation_radius: 0.35,
            decay: true,
        }
    }
}

impl CostmapConfig {
    pub fn is_valid(&self) -> bool {
        self.resolution > 0.0
            && self.inflation_radius >= 0.0
            && self.size > 2.0 * self.inflation_radius
    }

    fn cells(&self) -> usize {
        (self.size / self.resolution).round() as usize
    }
}

/// Exact squared Euclidean distance transform of a grid's occupied cells,
/// measured between cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2D,
    /// Squared distances in cells.
    sq_cells: Vec<u32>,
    any_occupied: bool,
}

/// Lower envelope of the parabolas `(x - i)^2 + gg[i]` along one row
/// (Felzenszwalb & Huttenlocher). Boundaries are kept as fractions and
/// compared by cross-multiplication, so the pass needs no division.
fn envelope_row(gg: &[i32], out: &mut [u32], v: &mut [usize], z: &mut [(i64, i64)]) {
    let key = |i: usize| i64::from(gg[i]) + (i * i) as i64;
    let mut k = 0usize;
    v[0] = 0;
    for q in 1..gg.len() {
        loop {
            let p = v[k];
            // intersection of parabolas p and q at num / den
            let (num, den) = (key(q) - key(p), 2 * (q - p) as i64);
            if k > 0 && num * z[k].1 <= z[k].0 * den {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = (num, den);
            break;
        }
    }
    let top = k;
    k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while k < top && z[k + 1].0 < x as i64 * z[k + 1].1 {
            k += 1;
        }
        let d = x as i64 - v[k] as i64;
        *o = (d * d + i64::from(gg[v[k]])) as u32;
    }
}

/// Working buffers for [`DistanceField::recompute`].
#[derive(Debug, Clone, Default)]
pub struct EdtScratch {
    g: Vec<i32>,
    v: Vec<usize>,
    z: Vec<(i64, i64)>,
}

impl DistanceField {
    pub fn compute(grid: &OccupancyGrid) -> Self {
        let mut field = Self {
            width: 0,
            height: 0,
            resolution: grid.resolution(),
            origin: grid.origin(),
            sq_cells: Vec::new(),
            any_occupied: false,
        };
        field.recompute(grid, &mut EdtScratch::default());
        field
    }

    /// Recomputes the field for `grid` in place, reusing allocations.
    pub fn recompute(&mut self, grid: &OccupancyGrid, scratch: &mut EdtScratch) {
        let (w, h) = (grid.width(), grid.height());
        let cells = grid.cells();
        let any = cells.contains(&CellState::Occupied);
        self.width = w;
        self.height = h;
        self.resolution = grid.resolution();
        self.origin = grid.origin();
        self.any_occupied = any;
        self.sq_cells.clear();
        self.sq_cells.resize(w * h, u32::MAX);
        if !any {
            return;
        }
        // column distances, swept row by row so the inner loop is contiguous;
        // `inf` exceeds any real distance while keeping squares in range
        let inf = (w + h) as i32;
        let g = &mut scratch.g;
        g.clear();
        g.extend(
            cells[..w]
                .iter()
                .map(|&c| if c == CellState::Occupied { 0 } else { inf }),
        );
        g.resize(w * h, 0);
        for iy in 1..h {
            let (prev, cur) = g.split_at_mut(iy * w);
            let prev = &prev[(iy - 1) * w..];
            let row = &cells[iy * w..(iy + 1) * w];
            for ((c, &p), &state) in cur[..w].iter_mut().zip(prev).zip(row) {
                *c = if state == CellState::Occupied {
                    0
                } else {
                    (p + 1).min(inf)
                };
            }
        }
        for iy in (0..h - 1).rev() {
            let (cur, next) = g.split_at_mut((iy + 1) * w);
            for (c, &nx) in cur[iy * w..].iter_mut().zip(&next[..w]) {
                *c = (*c).min(nx + 1);
            }
        }
        for v in g.iter_mut() {
            *v *= *v;
        }
        scratch.v.resize(w, 0);
        scratch.z.resize(w, (0, 1));
        for (row, out) in g.chunks_exact(w).zip(self.sq_cells.chunks_exact_mut(w)) {
            envelope_row(row, out, &mut scratch.v, &mut scratch.z);
        }
    }

    /// Squared distance in cells from `(ix, iy)` to the nearest occupied cell,
    /// `u32::MAX` when the grid is empty.
    pub fn squared_cells(&self, ix: usize, iy: usize) -> u32 {
        self.sq_cells[iy * self.width + ix]
    }

    pub fn has_obstacles(&self) -> bool {
        self.any_occupied
    }

    /// Distance in meters from the center of `(ix, iy)` to the nearest occupied
    /// cell center, or `f64::INFINITY` when the grid is empty.
    pub fn distance_at_cell(&self, ix: usize, iy: usize) -> f64 {
        if !self.any_occupied {
            return f64::INFINITY;
        }
        f64::from(self.sq_cells[iy * self.width + ix]).sqrt() * self.resolution
    }

    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        cell_of(
            x - self.origin.x,
            y - self.origin.y,
            self.resolution,
            self.width,
            self.height,
        )
    }

    /// Conservative clearance at an arbitrary point: never exceeds the exact
    /// distance to the nearest occupied cell center. `None` outside the grid.
    pub fn clearance_lower_bound(&self, x: f64, y: f64) -> Option<f64> {
        let (ix, iy) = self.locate(x, y)?;
        if !self.any_occupied {
            return Some(f64::INFINITY);
        }
        let cx = self.origin.x + (ix as f64 + 0.5) * self.resolution;
        let cy = self.origin.y + (iy as f64 + 0.5) * self.resolution;
        let off = ((x - cx) * (x - cx) + (y - cy) * (y - cy)).sqrt();
        Some((self.distance_at_cell(ix, iy) - off).max(0.0))
    }
}

/// Inflation cost at distance `d` from an obstacle: 255 on the obstacle,
/// linear falloff to 0 at `radius`.
pub fn inflation_cost(d: f64, radius: f64) -> u8 {
    if d <= 0.0 {
        LETHAL_COST
    } else if d >= radius {
        0
    } else {
        (f64::from(LETHAL_COST) * (1.0 - d / radius)).floor() as u8
    }
}

fn apply_inflation(grid: &mut OccupancyGrid, field: &DistanceField, radius: f64) {
    if !field.has_obstacles() {
        for i in 0..grid.cells().len() {
            grid.set_cost(i, 0);
        }
        return;
    }
    // costs depend only on the integer squared distance, so tabulate them
    let reach = (radius / field.resolution).ceil() as u32 + 1;
    let table: Vec<u8> = (0..=reach * reach)
        .map(|sq| inflation_cost(f64::from(sq).sqrt() * field.resolution, radius))
        .collect();
    let (cells, costs) = grid.raw_mut();
    for ((cost, &state), &sq) in costs.iter_mut().zip(cells.iter()).zip(&field.sq_cells) {
        if state != CellState::Occupied {
            *cost = table.get(sq as usize).copied().unwrap_or(0);
        }
    }
}

/// Returns a copy of `grid` whose non-occupied cells carry inflation costs.
pub fn inflate(grid: &OccupancyGrid, inflation_radius: f64) -> OccupancyGrid {
    let field = DistanceField::compute(grid);
    let mut out = grid.clone();
    apply_inflation(&mut out, &field, inflation_radius);
    out
}

fn exact_clearance(
    grid: &OccupancyGrid,
    field: &DistanceField,
    x: f64,
    y: f64,
) -> Result<f64, WorldError> {
    let (ix, iy) = grid
        .world_to_cell(x, y)
        .ok_or(WorldError::OutsideWindow { x, y })?;
    if !field.has_obstacles() {
        return Ok(f64::INFINITY);
    }
    let (cx, cy) = grid.cell_center(ix, iy);
    // the nearest center to (cx, cy) bounds the search radius around (x, y)
    let bound = field.distance_at_cell(ix, iy) + (x - cx).hypot(y - cy);
    let res = grid.resolution();
    let reach = (bound / res).ceil() as i64 + 1;
    let mut best = f64::INFINITY;
    for jy in (iy as i64 - reach).max(0)..=(iy as i64 + reach).min(grid.height() as i64 - 1) {
        for jx in (ix as i64 - reach).max(0)..=(ix as i64 + reach).min(grid.width() as i64 - 1) {
            let (jx, jy) = (jx as usize, jy as usize);
            if grid.is_occupied(jx, jy) {
                let (ox, oy) = grid.cell_center(jx, jy);
                best = best.min((x - ox).hypot(y - oy));
            }
        }
    }
    Ok(best)
}

/// Exact distance from `(x, y)` to the nearest occupied cell center
/// (`f64::INFINITY` when nothing is occupied).
pub fn clearance(grid: &OccupancyGrid, x: f64, y: f64) -> Result<f64, WorldError> {
    exact_clearance(grid, &DistanceField::compute(grid), x, y)
}

/// Moves the contents of an `n`-wide square window so that new cell
/// `(ix, iy)` holds old cell `(ix + sx, iy + sy)`; vacated cells get `fill`.
fn shift_window<T: Copy>(data: &mut [T], n: usize, sx: i64, sy: i64, fill: T) {
    let ni = n as i64;
    if sx.abs() >= ni || sy.abs() >= ni {
        data.fill(fill);
        return;
    }
    let width = (ni - sx.abs()) as usize;
    let (src_x, dst_x) = if sx >= 0 {
        (sx as usize, 0)
    } else {
        (0, (-sx) as usize)
    };
    // walk rows in the order that never overwrites a row still to be read
    for k in 0..n {
        let iy = if sy >= 0 { k } else { n - 1 - k };
        let src_y = iy as i64 + sy;
        let row = iy * n;
        if src_y < 0 || src_y >= ni {
            data[row..row + n].fill(fill);
            continue;
        }
        let src = src_y as usize * n + src_x;
        data.copy_within(src..src + width, row + dst_x);
        data[row..row + dst_x].fill(fill);
        data[row + dst_x + width..row + n].fill(fill);
    }
}

/// Robot-centred rolling costmap.
#[derive(Debug, Clone)]
pub struct LocalCostmap {
    config: CostmapConfig,
    grid: OccupancyGrid,
    field: DistanceField,
    /// Window origin in whole cells of the odometry frame.
    origin_cells: (i64, i64),
    beams: Option<BeamTable>,
    scratch: EdtScratch,
    /// Set when the occupied set changed since the last refresh.
    dirty: bool,
}

impl LocalCostmap {
    pub fn new(config: CostmapConfig, center: &Pose2D) -> Self {
        let n = config.cells();
        let origin_cells = Self::origin_for(&config, center);
        let origin = Pose2D::new(
            origin_cells.0 as f64 * config.resolution,
            origin_cells.1 as f64 * config.resolution,
            0.0,
        );
        let grid = OccupancyGrid::new(config.resolution, n, n, origin, CellState::Unknown);
        let field = DistanceField::compute(&grid);
        Self {
            config,
            grid,
            field,
            origin_cells,
            beams: None,
            scratch: EdtScratch::default(),
            dirty: false,
        }
    }

    fn origin_for(config: &CostmapConfig, center: &Pose2D) -> (i64, i64) {
        let half = (config.cells() / 2) as i64;
        (
            (center.x / config.resolution).floor() as i64 - half,
            (center.y / config.resolution).floor() as i64 - half,
        )
    }

    pub fn config(&self) -> &CostmapConfig {
        &self.config
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn field(&self) -> &DistanceField {
        &self.field
    }

    /// Shifts the window so it is centred on `center`, forgetting cells that leave it.
    pub fn recenter(&mut self, center: &Pose2D) {
        let new_origin = Self::origin_for(&self.config, center);
        let (sx, sy) = (
            new_origin.0 - self.origin_cells.0,
            new_origin.1 - self.origin_cells.1,
        );
        if sx == 0 && sy == 0 {
            return;
        }
        let n = self.grid.width();
        let res = self.config.resolution;
        self.grid.set_origin(Pose2D::new(
            new_origin.0 as f64 * res,
            new_origin.1 as f64 * res,
            0.0,
        ));
        let (cells, costs) = self.grid.raw_mut();
        shift_window(cells, n, sx, sy, CellState::Unknown);
        shift_window(costs, n, sx, sy, 0);
        self.origin_cells = new_origin;
        self.dirty = true;
    }

    /// Recenters on `odom_pose` and integrates `scan` taken from that pose.
    pub fn update(&mut self, scan: &LidarScan, odom_pose: &Pose2D) {
        self.recenter(odom_pose);
        let (px, py) = (odom_pose.x, odom_pose.y);
        let params = scan.params();
        if self.beams.as_ref().is_none_or(|b| *b.params() != params) {
            self.beams = Some(BeamTable::new(params));
        }
        let beams = self.beams.take().expect("beam table");
        let mut hits = Vec::new();
        // clear first, then mark, so grazing beams cannot erase fresh hits
        for ((dx, dy), &range) in beams.rotated(odom_pose.theta).zip(&scan.ranges) {
            let hit = range < scan.max_range;
            let end = if hit {
                let (ex, ey) = (px + dx * (range + 1e-6), py + dy * (range + 1e-6));
                let cell = self.grid.world_to_cell(ex, ey);
                if let Some(c) = cell {
                    hits.push(c);
                }
                cell
            } else {
                None
            };
            let ray = self.grid.traverse(px, py, dx, dy, range);
            let w = self.grid.width();
            let (cells, costs) = self.grid.raw_mut();
            for cell in ray {
                if Some((cell.ix, cell.iy)) == end {
                    break;
                }
                let i = cell.iy * w + cell.ix;
                match cells[i] {
                    // occupancy is unchanged, so the inflation cost stays valid
                    CellState::Unknown => cells[i] = CellState::Free,
                    CellState::Occupied if self.config.decay => {
                        cells[i] = CellState::Free;
                        costs[i] = 0;
                        self.dirty = true;
                    }
                    _ => {}
                }
            }
        }
        self.beams = Some(beams);
        for (ix, iy) in hits {
            if !self.grid.is_occupied(ix, iy) {
                self.grid.set_state(ix, iy, CellState::Occupied);
                self.dirty = true;
            }
        }
        if self.dirty {
            self.refresh();
        }
    }

    /// Recomputes the distance field and inflation costs after edits to the grid.
    pub fn refresh(&mut self) {
        self.field.recompute(&self.grid, &mut self.scratch);
        apply_inflation(&mut self.grid, &self.field, self.config.inflation_radius);
        self.dirty = false;
    }

    /// Marks a cell directly. Call [`LocalCostmap::refresh`] afterwards.
    pub fn set_cell(&mut self, ix: usize, iy: usize, state: CellState) {
        self.grid.set_state(ix, iy, state);
    }

    pub fn clearance(&self, x: f64, y: f64) -> Result<f64, WorldError> {
        exact_clearance(&self.grid, &self.field, x, y)
    }
}
