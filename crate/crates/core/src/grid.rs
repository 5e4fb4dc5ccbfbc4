//! Static occupancy grid, coordinate transforms, inflation and ray casting.
//!
//! Cell `(col, row)` covers the half-open world rectangle
//! `[origin.x + col*res, origin.x + (col+1)*res) x [origin.y + row*res, ...)`,
//! so a point lying exactly on a cell boundary belongs to the higher-index
//! cell. Anything outside the grid reads as [`Cell::Occupied`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Fractional cell coordinates this close to an integer snap onto it, so
/// that boundary points land deterministically despite decimal resolutions.
const BOUNDARY_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("expected {expected} cells, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("point ({x}, {y}) lies outside the map")]
    OutOfBounds { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub col: usize,
    pub row: usize,
}

impl CellIndex {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Result of [`GridMap::raycast`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayHit {
    pub visible: bool,
    /// First occupied cell strictly between the endpoints. `None` when the
    /// ray is visible or when it was stopped by leaving the grid.
    pub hit: Option<CellIndex>,
}

/// Immutable static occupancy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: WorldPoint,
    cells: Vec<Cell>,
}

impl GridMap {
    /// Builds a map from row-major cells, row 0 first.
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: WorldPoint,
        cells: Vec<Cell>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid { width, height });
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        if cells.len() != width * height {
            return Err(GridError::SizeMismatch {
                expected: width * height,
                actual: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        origin: WorldPoint,
        cell: Cell,
    ) -> Result<Self, GridError> {
        Self::new(width, height, resolution, origin, vec![cell; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> WorldPoint {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    #[inline]
    pub fn linear(&self, c: CellIndex) -> usize {
        c.row * self.width + c.col
    }

    #[inline]
    pub fn index_of(&self, linear: usize) -> CellIndex {
        CellIndex::new(linear % self.width, linear / self.width)
    }

    pub fn contains(&self, c: CellIndex) -> bool {
        c.col < self.width && c.row < self.height
    }

    /// Occupancy lookup with signed coordinates; out of bounds is occupied.
    #[inline]
    pub fn cell_at(&self, col: isize, row: isize) -> Cell {
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            Cell::Occupied
        } else {
            self.cells[row as usize * self.width + col as usize]
        }
    }

    #[inline]
    pub fn is_free(&self, c: CellIndex) -> bool {
        self.contains(c) && self.cells[self.linear(c)] == Cell::Free
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Free).count()
    }

    /// Continuous cell coordinates of a world point (not bounds-checked).
    fn grid_coords(&self, p: WorldPoint) -> (f64, f64) {
        (
            snap((p.x - self.origin.x) / self.resolution),
            snap((p.y - self.origin.y) / self.resolution),
        )
    }

    pub fn world_to_cell(&self, p: WorldPoint) -> Result<CellIndex, GridError> {
        let oob = GridError::OutOfBounds { x: p.x, y: p.y };
        if !p.is_finite() {
            return Err(oob);
        }
        let (gx, gy) = self.grid_coords(p);
        let (cx, cy) = (math::floor(gx), math::floor(gy));
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return Err(oob);
        }
        Ok(CellIndex::new(cx as usize, cy as usize))
    }

    /// World coordinates of the cell center.
    pub fn cell_to_world(&self, c: CellIndex) -> WorldPoint {
        WorldPoint::new(
            self.origin.x + (c.col as f64 + 0.5) * self.resolution,
            self.origin.y + (c.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Marks every free cell whose center lies within `radius` meters of an
    /// occupied cell center as occupied.
    pub fn inflate(&self, radius: f64) -> GridMap {
        if !(radius > 0.0) {
            return self.clone();
        }
        let reach = math::floor(radius / self.resolution) as isize;
        let mut offsets = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let d = math::hypot(dx as f64, dy as f64) * self.resolution;
                if d <= radius + BOUNDARY_SNAP * self.resolution {
                    offsets.push((dx, dy));
                }
            }
        }
        let mut out = self.cells.clone();
        for row in 0..self.height as isize {
            for col in 0..self.width as isize {
                if self.cell_at(col, row) != Cell::Occupied || !self.touches_free(col, row) {
                    continue;
                }
                // The nearest occupied cell to any free cell always has a
                // free 8-neighbor, so interior obstacle cells can be skipped.
                for &(dx, dy) in &offsets {
                    let (c, r) = (col + dx, row + dy);
                    if c >= 0 && r >= 0 && (c as usize) < self.width && (r as usize) < self.height {
                        out[r as usize * self.width + c as usize] = Cell::Occupied;
                    }
                }
            }
        }
        GridMap {
            cells: out,
            ..self.clone()
        }
    }

    fn touches_free(&self, col: isize, row: isize) -> bool {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx != 0 || dy != 0) && self.cell_at(col + dx, row + dy) == Cell::Free {
                    return true;
                }
            }
        }
        false
    }

    /// Grid-line voxel traversal from `from` to `to`.
    ///
    /// The start and end cells are not tested. A ray crossing a grid corner
    /// exactly steps diagonally and does not visit the two side cells.
    pub fn raycast(&self, from: WorldPoint, to: WorldPoint) -> Result<RayHit, GridError> {
        let start = self.world_to_cell(from)?;
        if !to.is_finite() {
            return Err(GridError::OutOfBounds { x: to.x, y: to.y });
        }
        let (x0, y0) = self.grid_coords(from);
        let (x1, y1) = self.grid_coords(to);
        let end = (math::floor(x1) as isize, math::floor(y1) as isize);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let mut cx = start.col as isize;
        let mut cy = start.row as isize;
        let (step_x, mut t_max_x, t_delta_x) = axis_setup(x0, dx, cx);
        let (step_y, mut t_max_y, t_delta_y) = axis_setup(y0, dy, cy);

        while (cx, cy) != end {
            let t_next = t_max_x.min(t_max_y);
            if t_next > 1.0 {
                break;
            }
            // crossings within rounding noise of each other pass through
            // the corner, so both directions of a ray visit the same cells
            let corner = (t_max_x - t_max_y).abs() <= CORNER_EPS * t_next.max(1.0);
            if !corner && t_max_x < t_max_y {
                cx += step_x;
                t_max_x += t_delta_x;
            } else if !corner && t_max_y < t_max_x {
                cy += step_y;
                t_max_y += t_delta_y;
            } else {
                cx += step_x;
                cy += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            }
            if (cx, cy) == end {
                break;
            }
            if self.cell_at(cx, cy) == Cell::Occupied {
                let inside = cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height;
                return Ok(RayHit {
                    visible: false,
                    hit: inside.then(|| CellIndex::new(cx as usize, cy as usize)),
                });
            }
        }
        let end_inside = end.0 >= 0
            && end.1 >= 0
            && (end.0 as usize) < self.width
            && (end.1 as usize) < self.height;
        Ok(RayHit {
            visible: end_inside,
            hit: None,
        })
    }
}

const CORNER_EPS: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = math::round(v);
    if (v - r).abs() < BOUNDARY_SNAP {
        r
    } else {
        v
    }
}

fn axis_setup(origin: f64, delta: f64, cell: isize) -> (isize, f64, f64) {
    if delta > 0.0 {
        (1, ((cell + 1) as f64 - origin) / delta, 1.0 / delta)
    } else if delta < 0.0 {
        (-1, (origin - cell as f64) / -delta, -1.0 / delta)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}
