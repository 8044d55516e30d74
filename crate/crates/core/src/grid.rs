//! Occupancy grids and exact grid traversal along rays.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;

/// Cost carried by every occupied cell.
pub const LETHAL_COST: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

/// Axis-aligned occupancy grid. Cell `(ix, iy)` covers
/// `[origin.x + ix*res, origin.x + (ix+1)*res) x [origin.y + iy*res, ...)`
/// and is stored row-major with `iy` as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    width: usize,
    height: usize,
    origin: Pose2D,
    cells: Vec<CellState>,
    costs: Vec<u8>,
}

impl OccupancyGrid {
    /// Creates a grid with every cell set to `fill`.
    ///
    /// Panics if `resolution` is not strictly positive; callers validate user input first.
    pub fn new(
        resolution: f64,
        width: usize,
        height: usize,
        origin: Pose2D,
        fill: CellState,
    ) -> Self {
        assert!(resolution > 0.0, "grid resolution must be positive");
        let cost = if fill == CellState::Occupied {
            LETHAL_COST
        } else {
            0
        };
        Self {
            resolution,
            width,
            height,
            origin,
            cells: vec![fill; width * height],
            costs: vec![cost; width * height],
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    pub fn set_origin(&mut self, origin: Pose2D) {
        self.origin = origin;
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    /// Row-major per-cell costs.
    pub fn costs(&self) -> &[u8] {
        &self.costs
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        cell_of(
            x - self.origin.x,
            y - self.origin.y,
            self.resolution,
            self.width,
            self.height,
        )
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn state(&self, ix: usize, iy: usize) -> CellState {
        self.cells[self.index(ix, iy)]
    }

    pub fn cost(&self, ix: usize, iy: usize) -> u8 {
        self.costs[self.index(ix, iy)]
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.state(ix, iy) == CellState::Occupied
    }

    pub fn set_state(&mut self, ix: usize, iy: usize, state: CellState) {
        let i = self.index(ix, iy);
        self.cells[i] = state;
        self.costs[i] = if state == CellState::Occupied {
            LETHAL_COST
        } else {
            0
        };
    }

    /// Cell states and costs for bulk edits. Callers keep occupied cells at
    /// `LETHAL_COST`.
    pub(crate) fn raw_mut(&mut self) -> (&mut [CellState], &mut [u8]) {
        (&mut self.cells, &mut self.costs)
    }

    /// Sets the cost of a non-occupied cell. Occupied cells keep `LETHAL_COST`.
    pub(crate) fn set_cost(&mut self, i: usize, cost: u8) {
        if self.cells[i] != CellState::Occupied {
            self.costs[i] = cost;
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| **c == CellState::Occupied)
            .count()
    }

    /// Centers of all occupied cells, in grid order.
    pub fn occupied_centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for iy in 0..self.height {
            for ix in 0..self.width {
                if self.is_occupied(ix, iy) {
                    out.push(self.cell_center(ix, iy));
                }
            }
        }
        out
    }

    /// Marks every cell whose center lies in the closed rectangle as occupied.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let (lo_x, hi_x) = (x0.min(x1), x0.max(x1));
        let (lo_y, hi_y) = (y0.min(y1), y0.max(y1));
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (cx, cy) = self.cell_center(ix, iy);
                if cx >= lo_x && cx <= hi_x && cy >= lo_y && cy <= hi_y {
                    self.set_state(ix, iy, CellState::Occupied);
                }
            }
        }
    }

    /// Distance from `(x, y)` to the closest point of cell `(ix, iy)`'s square.
    pub fn distance_to_cell(&self, x: f64, y: f64, ix: usize, iy: usize) -> f64 {
        let x0 = self.origin.x + ix as f64 * self.resolution;
        let y0 = self.origin.y + iy as f64 * self.resolution;
        let dx = (x0 - x).max(0.0).max(x - (x0 + self.resolution));
        let dy = (y0 - y).max(0.0).max(y - (y0 + self.resolution));
        dx.hypot(dy)
    }

    /// Cells traversed by the segment from `(x, y)` along unit direction
    /// `(dx, dy)` up to distance `max_t`.
    pub fn traverse(&self, x: f64, y: f64, dx: f64, dy: f64, max_t: f64) -> GridRay {
        GridRay::new(self, x, y, dx, dy, max_t)
    }
}

/// `floor` as an integer without a libm call.
pub(crate) fn floor_i64(g: f64) -> i64 {
    let i = g as i64;
    if (i as f64) > g {
        i - 1
    } else {
        i
    }
}

/// Cell containing the offset `(dx, dy)` from a grid origin, if inside.
pub(crate) fn cell_of(
    dx: f64,
    dy: f64,
    resolution: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize)> {
    let (gx, gy) = (dx / resolution, dy / resolution);
    // truncation is floor once both are known non-negative
    if !(gx >= 0.0 && gy >= 0.0) {
        return None;
    }
    let (ix, iy) = (gx as usize, gy as usize);
    (ix < width && iy < height).then_some((ix, iy))
}

/// One cell visited by a [`GridRay`], with the ray parameter at entry and exit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCell {
    pub ix: usize,
    pub iy: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Exact voxel traversal (Amanatides & Woo) over an [`OccupancyGrid`].
/// Stops at the grid boundary or once `max_t` is reached.
pub struct GridRay {
    width: i64,
    height: i64,
    ix: i64,
    iy: i64,
    step_x: i64,
    step_y: i64,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    t: f64,
    max_t: f64,
    done: bool,
}

impl GridRay {
    fn new(grid: &OccupancyGrid, x: f64, y: f64, dx: f64, dy: f64, max_t: f64) -> Self {
        let res = grid.resolution;
        let gx = (x - grid.origin.x) / res;
        let gy = (y - grid.origin.y) / res;
        let ix = floor_i64(gx);
        let iy = floor_i64(gy);
        let axis = |g: f64, i: i64, d: f64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, ((i + 1) as f64 - g) * res / d, res / d)
            } else if d < 0.0 {
                (-1, (g - i as f64) * res / -d, res / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, t_max_x, t_delta_x) = axis(gx, ix, dx);
        let (step_y, t_max_y, t_delta_y) = axis(gy, iy, dy);
        let done = !grid.in_bounds(ix, iy) || max_t < 0.0;
        Self {
            width: grid.width as i64,
            height: grid.height as i64,
            ix,
            iy,
            step_x,
            step_y,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            t: 0.0,
            max_t,
            done,
        }
    }
}

impl Iterator for GridRay {
    type Item = RayCell;

    fn next(&mut self) -> Option<RayCell> {
        if self.done {
            return None;
        }
        let t_enter = self.t;
        let t_exit = self.t_max_x.min(self.t_max_y);
        let cell = RayCell {
            ix: self.ix as usize,
            iy: self.iy as usize,
            t_enter,
            t_exit: t_exit.min(self.max_t),
        };
        if t_exit >= self.max_t {
            self.done = true;
        } else {
            if self.t_max_x < self.t_max_y {
                self.ix += self.step_x;
                self.t = self.t_max_x;
                self.t_max_x += self.t_delta_x;
            } else {
                self.iy += self.step_y;
                self.t = self.t_max_y;
                self.t_max_y += self.t_delta_y;
            }
            if self.ix < 0 || self.iy < 0 || self.ix >= self.width || self.iy >= self.height {
                self.done = true;
            }
        }
        Some(cell)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::new(0.1, w, h, Pose2D::default(), CellState::Free)
    }

    #[test]
    fn cell_mapping_round_trips_within_bounds() {
        let g = grid(20, 10);
        for iy in 0..10 {
            for ix in 0..20 {
                let (x, y) = g.cell_center(ix, iy);
                assert_eq!(g.world_to_cell(x, y), Some((ix, iy)));
            }
        }
        assert_eq!(g.world_to_cell(-0.01, 0.5), None);
        assert_eq!(g.world_to_cell(2.0, 0.5), None);
    }

    #[test]
    fn occupied_cells_are_lethal() {
        let mut g = grid(4, 4);
        g.set_state(1, 2, CellState::Occupied);
        assert_eq!(g.cost(1, 2), LETHAL_COST);
        g.set_cost(g.index(1, 2), 10);
        assert_eq!(g.cost(1, 2), LETHAL_COST);
    }

    #[test]
    fn traversal_is_contiguous_and_matches_sampling() {
        let g = grid(50, 50);
        let angle: f64 = 0.7;
        let (dx, dy) = (angle.cos(), angle.sin());
        let cells: Vec<_> = g.traverse(0.23, 0.41, dx, dy, 3.0).collect();
        for w in cells.windows(2) {
            let manhattan =
                (w[0].ix as i64 - w[1].ix as i64).abs() + (w[0].iy as i64 - w[1].iy as i64).abs();
            assert_eq!(manhattan, 1);
            assert!((w[0].t_exit - w[1].t_enter).abs() < 1e-12);
        }
        // every densely sampled point along the ray lands in a visited cell
        let visited: std::collections::HashSet<_> = cells.iter().map(|c| (c.ix, c.iy)).collect();
        for k in 0..3000 {
            let t = k as f64 * 1e-3;
            let c = g.world_to_cell(0.23 + t * dx, 0.41 + t * dy).unwrap();
            assert!(visited.contains(&c));
        }
    }

    #[test]
    fn distance_to_cell_is_zero_inside() {
        let g = grid(10, 10);
        assert_eq!(g.distance_to_cell(0.35, 0.35, 3, 3), 0.0);
        assert!((g.distance_to_cell(0.0, 0.35, 3, 3) - 0.3).abs() < 1e-12);
    }
}
