//! Per-cell rasters sharing a [`GridMap`]'s geometry.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grid::{CellIndex, GridMap, WorldPoint};
use crate::math;

/// Stored value of cells the wavefront never finalized. Never used in
/// arithmetic: every read goes through [`ScalarField::get`] or an explicit
/// reachability check.
pub(crate) const UNREACHED: f64 = f64::INFINITY;

/// Arrival time (or distance) per cell; `None` marks unreached cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: WorldPoint,
    values: Vec<f64>,
}

impl ScalarField {
    /// A field with every cell unreached.
    pub fn unreached(map: &GridMap) -> Self {
        Self::from_raw(map, vec![UNREACHED; map.len()])
    }

    /// Builds a field from optional per-cell values (row-major).
    pub fn from_values(map: &GridMap, values: &[Option<f64>]) -> Self {
        assert_eq!(values.len(), map.len(), "field size must match the map");
        Self::from_raw(map, values.iter().map(|v| v.unwrap_or(UNREACHED)).collect())
    }

    pub(crate) fn from_raw(map: &GridMap, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), map.len());
        Self {
            width: map.width(),
            height: map.height(),
            resolution: map.resolution(),
            origin: map.origin(),
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> WorldPoint {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, c: CellIndex) -> Option<f64> {
        if c.col >= self.width || c.row >= self.height {
            return None;
        }
        self.get_linear(c.row * self.width + c.col)
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> Option<f64> {
        let v = self.values[i];
        (v != UNREACHED).then_some(v)
    }

    #[inline]
    pub fn is_reached(&self, i: usize) -> bool {
        self.values[i] != UNREACHED
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn replace_raw(&mut self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.values.len());
        self.values = values;
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values.iter().map(|&v| (v != UNREACHED).then_some(v))
    }

    pub fn to_options(&self) -> Vec<Option<f64>> {
        self.iter().collect()
    }

    /// Largest reached value.
    pub fn max_value(&self) -> Option<f64> {
        self.iter().flatten().fold(None, |acc, v| match acc {
            Some(m) if m >= v => Some(m),
            _ => Some(v),
        })
    }

    pub fn cell_to_world(&self, c: CellIndex) -> WorldPoint {
        WorldPoint::new(
            self.origin.x + (c.col as f64 + 0.5) * self.resolution,
            self.origin.y + (c.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Containing cell of a world point, half-open like [`GridMap::world_to_cell`].
    pub fn world_to_cell(&self, p: WorldPoint) -> Option<CellIndex> {
        if !p.is_finite() {
            return None;
        }
        let gx = snap((p.x - self.origin.x) / self.resolution);
        let gy = snap((p.y - self.origin.y) / self.resolution);
        let (cx, cy) = (math::floor(gx), math::floor(gy));
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some(CellIndex::new(cx as usize, cy as usize))
    }

    /// Bilinear interpolation between the four surrounding cell centers and
    /// its gradient (per meter). `None` if any of them is unreached or out
    /// of the grid.
    pub fn interpolate(&self, p: WorldPoint) -> Option<(f64, [f64; 2])> {
        let u = (p.x - self.origin.x) / self.resolution - 0.5;
        let v = (p.y - self.origin.y) / self.resolution - 0.5;
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
        let (i0, j0) = (math::floor(u), math::floor(v));
        if i0 < 0.0 || j0 < 0.0 || i0 + 1.0 >= self.width as f64 || j0 + 1.0 >= self.height as f64 {
            return None;
        }
        let (i0, j0) = (i0 as usize, j0 as usize);
        let fx = u - i0 as f64;
        let fy = v - j0 as f64;
        let at = |i: usize, j: usize| self.get_linear(j * self.width + i);
        let v00 = at(i0, j0)?;
        let v10 = at(i0 + 1, j0)?;
        let v01 = at(i0, j0 + 1)?;
        let v11 = at(i0 + 1, j0 + 1)?;
        let value = (1.0 - fx) * (1.0 - fy) * v00
            + fx * (1.0 - fy) * v10
            + (1.0 - fx) * fy * v01
            + fx * fy * v11;
        let gx = ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01)) / self.resolution;
        let gy = ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10)) / self.resolution;
        Some((value, [gx, gy]))
    }
}

fn snap(v: f64) -> f64 {
    let r = math::round(v);
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Front propagation speed per cell; zero marks impassable cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    width: usize,
    height: usize,
    speeds: Vec<f64>,
}

impl VelocityField {
    /// `F = 1` on free cells and `0` on occupied ones.
    pub fn uniform(map: &GridMap) -> Self {
        let speeds = map
            .cells()
            .iter()
            .map(|c| if *c == crate::grid::Cell::Free { 1.0 } else { 0.0 })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            speeds,
        }
    }

    /// Builds a field from raw speeds. Occupied cells are forced to zero and
    /// negative or non-finite speeds are clamped to zero.
    pub fn from_speeds(map: &GridMap, speeds: Vec<f64>) -> Self {
        assert_eq!(speeds.len(), map.len(), "velocity size must match the map");
        let speeds = speeds
            .into_iter()
            .zip(map.cells())
            .map(|(s, c)| {
                if *c == crate::grid::Cell::Occupied || !(s.is_finite() && s > 0.0) {
                    0.0
                } else {
                    s
                }
            })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            speeds,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    #[inline]
    pub fn get(&self, c: CellIndex) -> f64 {
        if c.col >= self.width || c.row >= self.height {
            0.0
        } else {
            self.speeds[c.row * self.width + c.col]
        }
    }

    pub(crate) fn matches(&self, map: &GridMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }
}

/// Arrival field plus the id of the source whose front claimed each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledField {
    pub field: ScalarField,
    pub labels: Vec<Option<u32>>,
}

impl LabeledField {
    pub fn label(&self, c: CellIndex) -> Option<u32> {
        if c.col >= self.field.width() || c.row >= self.field.height() {
            return None;
        }
        self.labels[c.row * self.field.width() + c.col]
    }
}
