//! Fast Marching solver for the grid Eikonal equation `|grad T| * F = 1`.
//!
//! Cells are finalized in the pop order of a [`Frontier`]. Each tentative
//! value comes from a first-order upwind update over the 8-neighborhood,
//! using only finalized neighbors. The plain solver pops in
//! ascending `(arrival, linear index)` order; the traversability planner
//! plugs in a different frontier and reuses the same update.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::field::{LabeledField, ScalarField, VelocityField, UNREACHED};
use crate::grid::{Cell, CellIndex, GridMap, WorldPoint};
use crate::math;

/// Speeds below this are impassable.
pub const DEFAULT_EPSILON_F: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EikonalError {
    #[error("no source cells given")]
    NoSources,
    #[error("source cell ({}, {}) is not free", .0.col, .0.row)]
    SourceOccupied(CellIndex),
    #[error("field dimensions do not match the map")]
    DimensionMismatch,
    #[error("point ({x}, {y}) lies outside the field")]
    OutOfBounds { x: f64, y: f64 },
    #[error("start point lies in an unreached cell")]
    Unreachable,
    #[error("descent stalled at ({x}, {y})")]
    StalledDescent { x: f64, y: f64 },
    #[error("descent step must be positive, got {0}")]
    BadStep(f64),
}

/// Total order over finite floats, used for frontier keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key(pub f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A candidate cell waiting on the wavefront.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierEntry {
    /// Row-major linear cell index.
    pub cell: usize,
    pub arrival: f64,
    /// Traversability of the cell's region; `1.0` for the plain solver.
    pub tr: f64,
}

/// Ordered wavefront. Entries may go stale when a cell improves; the
/// marcher skips stale pops, so implementations only need to order.
pub trait Frontier {
    fn push(&mut self, entry: FrontierEntry);
    fn pop(&mut self) -> Option<FrontierEntry>;
}

/// Plain FMM ordering: ascending arrival, then ascending cell index.
#[derive(Debug, Default)]
pub struct ArrivalFrontier {
    heap: BinaryHeap<Reverse<(Key, usize)>>,
}

impl ArrivalFrontier {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Frontier for ArrivalFrontier {
    fn push(&mut self, entry: FrontierEntry) {
        self.heap.push(Reverse((Key(entry.arrival), entry.cell)));
    }

    fn pop(&mut self) -> Option<FrontierEntry> {
        self.heap.pop().map(|Reverse((Key(arrival), cell))| FrontierEntry {
            cell,
            arrival,
            tr: 1.0,
        })
    }
}

/// Everything the marcher reads. `speed` and `tr` are row-major.
#[derive(Debug, Clone, Copy)]
pub struct MarchProblem<'a> {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub speed: &'a [f64],
    /// Per-cell traversability attached to frontier entries.
    pub tr: Option<&'a [f64]>,
    /// Extra per-cell veto; `false` cells are never expanded.
    pub expandable: Option<&'a [bool]>,
    pub epsilon_f: f64,
    /// Halt right after this linear index is finalized.
    pub stop_at: Option<usize>,
}

/// Raw marcher output: only finalized cells carry values and labels.
#[derive(Debug, Clone)]
pub struct MarchOutput {
    pub values: Vec<f64>,
    pub labels: Vec<Option<u32>>,
    pub finalized: usize,
}

/// Runs the wavefront from `sources` (linear index, label) until the
/// frontier empties or `stop_at` is finalized. When `trace` is given, the
/// finalized cells are appended in pop order.
pub fn march<Q: Frontier>(
    problem: &MarchProblem<'_>,
    sources: &[(usize, u32)],
    frontier: &mut Q,
    mut trace: Option<&mut Vec<usize>>,
) -> MarchOutput {
    let n = problem.width * problem.height;
    let mut values = vec![UNREACHED; n];
    let mut labels: Vec<Option<u32>> = vec![None; n];
    let mut known = vec![false; n];
    let tr_of = |i: usize| problem.tr.map_or(1.0, |t| t[i]);

    for &(cell, label) in sources {
        if values[cell] == 0.0 {
            continue;
        }
        values[cell] = 0.0;
        labels[cell] = Some(label);
        frontier.push(FrontierEntry {
            cell,
            arrival: 0.0,
            tr: tr_of(cell),
        });
    }

    let mut finalized = 0;
    while let Some(entry) = frontier.pop() {
        let i = entry.cell;
        if known[i] || entry.arrival != values[i] {
            continue;
        }
        known[i] = true;
        finalized += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(i);
        }
        if problem.stop_at == Some(i) {
            break;
        }
        let (col, row) = (i % problem.width, i / problem.width);
        for (nc, nr) in neighbors4(col, row, problem.width, problem.height) {
            let j = nr * problem.width + nc;
            if known[j] || !passable(problem, j) {
                continue;
            }
            let (candidate, label) = upwind_update(problem, &values, &known, &labels, nc, nr);
            if candidate < values[j] {
                values[j] = candidate;
                labels[j] = label;
                frontier.push(FrontierEntry {
                    cell: j,
                    arrival: candidate,
                    tr: tr_of(j),
                });
            } else if candidate == values[j] && label < labels[j] {
                labels[j] = label;
            }
        }
    }

    for i in 0..n {
        if !known[i] {
            values[i] = UNREACHED;
            labels[i] = None;
        }
    }
    MarchOutput {
        values,
        labels,
        finalized,
    }
}

#[inline]
fn passable(problem: &MarchProblem<'_>, j: usize) -> bool {
    problem.speed[j] >= problem.epsilon_f && problem.expandable.map_or(true, |e| e[j])
}

#[inline]
pub(crate) fn neighbors4(
    col: usize,
    row: usize,
    width: usize,
    height: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let left = (col > 0).then(|| (col - 1, row));
    let right = (col + 1 < width).then(|| (col + 1, row));
    let down = (row > 0).then(|| (col, row - 1));
    let up = (row + 1 < height).then(|| (col, row + 1));
    [left, right, down, up].into_iter().flatten()
}

/// Upwind update of cell `(col, row)` from its finalized 8-neighborhood.
///
/// Candidates: the 4-neighbor Godunov quadratic, the eight triangles formed
/// by an axis neighbor and its adjacent diagonal, and the one-sided steps
/// `T(n) + |n - x| / F`. The result is their minimum, so it never exceeds
/// the 8-connected graph distance. Diagonals are ignored when both side
/// cells are impassable. The label comes from the best one-sided step
/// (ties to the lower label).
fn upwind_update(
    problem: &MarchProblem<'_>,
    values: &[f64],
    known: &[bool],
    labels: &[Option<u32>],
    col: usize,
    row: usize,
) -> (f64, Option<u32>) {
    let w = problem.width as isize;
    let hgt = problem.height as isize;
    let idx = |dc: isize, dr: isize| -> Option<usize> {
        let (c, r) = (col as isize + dc, row as isize + dr);
        (c >= 0 && r >= 0 && c < w && r < hgt).then(|| (r * w + c) as usize)
    };
    let known_value = |dc: isize, dr: isize| -> Option<(f64, usize)> {
        let k = idx(dc, dr)?;
        known[k].then(|| (values[k], k))
    };
    let h = problem.resolution / problem.speed[row * problem.width + col];
    let h_diag = core::f64::consts::SQRT_2 * h;

    let mut best = UNREACHED;
    let mut label: Option<u32> = None;
    let mut one_sided = UNREACHED;
    let mut consider = |v: f64, k: usize, best: &mut f64| {
        if v < one_sided || (v == one_sided && labels[k] < label) {
            one_sided = v;
            label = labels[k];
        }
        if v < *best {
            *best = v;
        }
    };

    let left = known_value(-1, 0);
    let right = known_value(1, 0);
    let down = known_value(0, -1);
    let up = known_value(0, 1);
    for n in [left, right, down, up].into_iter().flatten() {
        consider(n.0 + h, n.1, &mut best);
    }
    let axis_min = |a: Option<(f64, usize)>, b: Option<(f64, usize)>| match (a, b) {
        (Some(x), Some(y)) => x.0.min(y.0),
        (Some(x), None) | (None, Some(x)) => x.0,
        (None, None) => UNREACHED,
    };
    let quad = solve_quadratic(axis_min(left, right), axis_min(down, up), h);
    if quad < best {
        best = quad;
    }

    for (dc, dr) in [(-1isize, -1isize), (1, -1), (-1, 1), (1, 1)] {
        let Some((dv, dk)) = known_value(dc, dr) else {
            continue;
        };
        let side_h = idx(dc, 0).filter(|&k| passable(problem, k) || known[k]);
        let side_v = idx(0, dr).filter(|&k| passable(problem, k) || known[k]);
        if side_h.is_none() && side_v.is_none() {
            continue;
        }
        consider(dv + h_diag, dk, &mut best);
        for side in [known_value(dc, 0), known_value(0, dr)].into_iter().flatten() {
            let t = solve_triangle(side.0, dv, h);
            if t < best {
                best = t;
            }
        }
    }
    (best, label)
}

/// Plane-wave update inside the triangle spanned by an axis neighbor (value
/// `a`, one step `h` away) and the adjacent diagonal neighbor (value `d`).
pub fn solve_triangle(a: f64, d: f64, h: f64) -> f64 {
    let delta = d - a;
    if delta >= 0.0 {
        return a + h;
    }
    let k = -delta / h;
    if k >= core::f64::consts::FRAC_1_SQRT_2 {
        return d + core::f64::consts::SQRT_2 * h;
    }
    let s = k / math::sqrt(1.0 - k * k);
    a + s * delta + h * math::sqrt(1.0 + s * s)
}

/// Upwind solution given the smallest finalized value along each axis
/// (`UNREACHED` when an axis has none) and the local step `h = res / F`.
pub fn solve_quadratic(a: f64, b: f64, h: f64) -> f64 {
    let a_known = a != UNREACHED;
    let b_known = b != UNREACHED;
    match (a_known, b_known) {
        (true, false) => a + h,
        (false, true) => b + h,
        (true, true) => {
            let d = a - b;
            if d.abs() >= h {
                a.min(b) + h
            } else {
                0.5 * (a + b + math::sqrt(2.0 * h * h - d * d))
            }
        }
        (false, false) => UNREACHED,
    }
}

/// Multi-source propagation over `velocity`. Labels are the positions of
/// the sources in `sources`. With `stop_at`, marching halts as soon as that
/// cell is finalized; every finalized value equals the full run's value.
pub fn propagate(
    map: &GridMap,
    sources: &[CellIndex],
    velocity: &VelocityField,
    stop_at: Option<CellIndex>,
) -> Result<LabeledField, EikonalError> {
    propagate_with(map, sources, velocity, stop_at, DEFAULT_EPSILON_F)
}

pub fn propagate_with(
    map: &GridMap,
    sources: &[CellIndex],
    velocity: &VelocityField,
    stop_at: Option<CellIndex>,
    epsilon_f: f64,
) -> Result<LabeledField, EikonalError> {
    if sources.is_empty() {
        return Err(EikonalError::NoSources);
    }
    if !velocity.matches(map) {
        return Err(EikonalError::DimensionMismatch);
    }
    let mut seeded = Vec::with_capacity(sources.len());
    for (id, s) in sources.iter().enumerate() {
        if !map.is_free(*s) {
            return Err(EikonalError::SourceOccupied(*s));
        }
        seeded.push((map.linear(*s), id as u32));
    }
    let problem = MarchProblem {
        width: map.width(),
        height: map.height(),
        resolution: map.resolution(),
        speed: velocity.speeds(),
        tr: None,
        expandable: None,
        epsilon_f,
        stop_at: stop_at.filter(|c| map.contains(*c)).map(|c| map.linear(c)),
    };
    let out = march(&problem, &seeded, &mut ArrivalFrontier::new(), None);
    Ok(LabeledField {
        field: ScalarField::from_raw(map, out.values),
        labels: out.labels,
    })
}

/// Distance from every free cell to the nearest occupied cell or the map
/// border, with `F = 1` on free space. Occupied cells read `0`.
pub fn obstacle_distance(map: &GridMap) -> ScalarField {
    // Pad with a ring of occupied cells so the border acts as an obstacle.
    let (w, h) = (map.width() + 2, map.height() + 2);
    let mut speed = vec![0.0; w * h];
    let mut sources = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let cell = map.cell_at(col as isize - 1, row as isize - 1);
            let i = row * w + col;
            if cell == Cell::Free {
                speed[i] = 1.0;
            } else {
                let touches_free = neighbors4(col, row, w, h)
                    .any(|(c, r)| map.cell_at(c as isize - 1, r as isize - 1) == Cell::Free);
                if touches_free {
                    sources.push((i, 0));
                }
            }
        }
    }
    let problem = MarchProblem {
        width: w,
        height: h,
        resolution: map.resolution(),
        speed: &speed,
        tr: None,
        expandable: None,
        epsilon_f: DEFAULT_EPSILON_F,
        stop_at: None,
    };
    let out = march(&problem, &sources, &mut ArrivalFrontier::new(), None);
    let mut values = Vec::with_capacity(map.len());
    for row in 0..map.height() {
        for col in 0..map.width() {
            let cell = map.cell_at(col as isize, row as isize);
            let v = out.values[(row + 1) * w + col + 1];
            values.push(if cell == Cell::Occupied { 0.0 } else { v });
        }
    }
    ScalarField::from_raw(map, values)
}

/// Pointwise `min(field, d_sat)`; unreached cells become `d_sat`.
pub fn saturate(field: &ScalarField, d_sat: f64) -> ScalarField {
    let mut out = field.clone();
    let values: Vec<f64> = field
        .raw()
        .iter()
        .map(|&v| if v == UNREACHED { d_sat } else { v.min(d_sat) })
        .collect();
    out.replace_raw(values);
    out
}

/// Follows the arrival field downhill from `from` to a source cell.
///
/// Each step moves `step` meters against the bilinear gradient and is kept
/// only if the interpolated value strictly drops. Otherwise the path jumps
/// to the center of the lowest 8-neighbor cell. Diagonal jumps between two
/// unreached side cells are not taken. The returned polyline starts at
/// `from` and ends at the center of a source cell.
pub fn descend_path(
    field: &ScalarField,
    from: WorldPoint,
    step: f64,
) -> Result<Vec<WorldPoint>, EikonalError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(EikonalError::BadStep(step));
    }
    let start = field
        .world_to_cell(from)
        .ok_or(EikonalError::OutOfBounds { x: from.x, y: from.y })?;
    let start_value = field.get(start).ok_or(EikonalError::Unreachable)?;

    let mut path = vec![from];
    let mut p = from;
    let mut current = value_at(field, p).unwrap_or(start_value);
    let max_iter = 4 * field.len() + 16;
    for _ in 0..max_iter {
        let cell = field
            .world_to_cell(p)
            .ok_or(EikonalError::OutOfBounds { x: p.x, y: p.y })?;
        if field.get(cell) == Some(0.0) {
            let center = field.cell_to_world(cell);
            if center != p {
                path.push(center);
            }
            return Ok(path);
        }
        if let Some(next) = gradient_step(field, p, current, step) {
            p = next.0;
            current = next.1;
            path.push(p);
            continue;
        }
        match lowest_neighbor(field, cell, current) {
            Some((q, v)) => {
                p = q;
                current = v;
                path.push(p);
            }
            None => return Err(EikonalError::StalledDescent { x: p.x, y: p.y }),
        }
    }
    Err(EikonalError::StalledDescent { x: p.x, y: p.y })
}

fn value_at(field: &ScalarField, p: WorldPoint) -> Option<f64> {
    if let Some((v, _)) = field.interpolate(p) {
        return Some(v);
    }
    field.world_to_cell(p).and_then(|c| field.get(c))
}

fn gradient_step(
    field: &ScalarField,
    p: WorldPoint,
    current: f64,
    step: f64,
) -> Option<(WorldPoint, f64)> {
    let (_, g) = field.interpolate(p)?;
    let norm = math::hypot(g[0], g[1]);
    if !(norm > 0.0) {
        return None;
    }
    let q = WorldPoint::new(p.x - step * g[0] / norm, p.y - step * g[1] / norm);
    let cell = field.world_to_cell(q)?;
    field.get(cell)?;
    let v = value_at(field, q)?;
    (v < current).then_some((q, v))
}

fn lowest_neighbor(field: &ScalarField, cell: CellIndex, current: f64) -> Option<(WorldPoint, f64)> {
    let w = field.width() as isize;
    let h = field.height() as isize;
    let reached = |c: isize, r: isize| -> Option<f64> {
        if c < 0 || r < 0 || c >= w || r >= h {
            return None;
        }
        field.get(CellIndex::new(c as usize, r as usize))
    };
    let (c0, r0) = (cell.col as isize, cell.row as isize);
    let pick = |diagonals: bool, guarded: bool| -> Option<(WorldPoint, f64)> {
        let mut best: Option<(f64, CellIndex)> = None;
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let diagonal = dr != 0 && dc != 0;
                if (dr == 0 && dc == 0) || (diagonal && !diagonals) {
                    continue;
                }
                let Some(v) = reached(c0 + dc, r0 + dr) else {
                    continue;
                };
                if diagonal && guarded && reached(c0 + dc, r0).is_none() && reached(c0, r0 + dr).is_none() {
                    continue;
                }
                let idx = CellIndex::new((c0 + dc) as usize, (r0 + dr) as usize);
                if best.map_or(true, |(bv, bi)| v < bv || (v == bv && idx < bi)) {
                    best = Some((v, idx));
                }
            }
        }
        let (_, idx) = best?;
        let q = field.cell_to_world(idx);
        let v = value_at(field, q)?;
        (v < current).then_some((q, v))
    };
    // Diagonals through two unreached side cells are a last resort.
    pick(true, true).or_else(|| pick(false, false)).or_else(|| pick(true, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(w: usize, h: usize, res: f64) -> GridMap {
        GridMap::filled(w, h, res, WorldPoint::default(), Cell::Free).unwrap()
    }

    #[test]
    fn quadratic_cases() {
        assert_eq!(solve_quadratic(1.0, UNREACHED, 1.0), 2.0);
        assert_eq!(solve_quadratic(UNREACHED, 3.0, 0.5), 3.5);
        assert_eq!(solve_quadratic(0.0, 5.0, 1.0), 1.0);
        let v = solve_quadratic(0.0, 0.0, 1.0);
        assert!((v - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(solve_quadratic(UNREACHED, UNREACHED, 1.0), UNREACHED);
    }

    #[test]
    fn single_cell_source() {
        let m = free(1, 1, 0.1);
        let f = propagate(&m, &[CellIndex::new(0, 0)], &VelocityField::uniform(&m), None).unwrap();
        assert_eq!(f.field.get(CellIndex::new(0, 0)), Some(0.0));
        assert_eq!(f.labels[0], Some(0));
    }

    #[test]
    fn source_errors() {
        let m = free(3, 3, 1.0);
        let v = VelocityField::uniform(&m);
        assert_eq!(propagate(&m, &[], &v, None).unwrap_err(), EikonalError::NoSources);
        let mut cells = m.cells().to_vec();
        cells[4] = Cell::Occupied;
        let walled = GridMap::new(3, 3, 1.0, WorldPoint::default(), cells).unwrap();
        let err = propagate(&walled, &[CellIndex::new(1, 1)], &VelocityField::uniform(&walled), None);
        assert_eq!(err.unwrap_err(), EikonalError::SourceOccupied(CellIndex::new(1, 1)));
        let other = free(4, 4, 1.0);
        let err = propagate(&m, &[CellIndex::new(0, 0)], &VelocityField::uniform(&other), None);
        assert_eq!(err.unwrap_err(), EikonalError::DimensionMismatch);
    }

    #[test]
    fn wall_ring_leaves_inside_unreached() {
        let mut cells = vec![Cell::Free; 49];
        for i in 1..6 {
            for (c, r) in [(i, 1), (i, 5), (1, i), (5, i)] {
                cells[r * 7 + c] = Cell::Occupied;
            }
        }
        let m = GridMap::new(7, 7, 1.0, WorldPoint::default(), cells).unwrap();
        let f = propagate(&m, &[CellIndex::new(0, 0)], &VelocityField::uniform(&m), None).unwrap();
        assert_eq!(f.field.get(CellIndex::new(3, 3)), None);
        assert_eq!(f.labels[3 * 7 + 3], None);
        assert!(f.field.get(CellIndex::new(6, 6)).is_some());
    }

    #[test]
    fn stop_at_matches_full_run() {
        let m = free(20, 20, 0.5);
        let v = VelocityField::uniform(&m);
        let src = [CellIndex::new(2, 3)];
        let full = propagate(&m, &src, &v, None).unwrap();
        let part = propagate(&m, &src, &v, Some(CellIndex::new(10, 10))).unwrap();
        let mut reached = 0;
        for (a, b) in full.field.iter().zip(part.field.iter()) {
            if let Some(b) = b {
                assert_eq!(Some(b), a);
                reached += 1;
            }
        }
        assert!(reached < m.len());
        assert!(part.field.get(CellIndex::new(10, 10)).is_some());
    }

    #[test]
    fn obstacle_distance_counts_border() {
        let m = free(5, 1, 1.0);
        let d = obstacle_distance(&m);
        // a one-row corridor never exceeds one cell of clearance
        assert!(d.iter().all(|v| v.unwrap() > 0.7 && v.unwrap() <= 1.0));
        let m = free(7, 7, 1.0);
        let d = obstacle_distance(&m);
        assert!((d.get(CellIndex::new(0, 3)).unwrap() - 1.0).abs() < 1e-6);
        assert!(d.get(CellIndex::new(3, 3)).unwrap() > 3.0);
    }

    #[test]
    fn saturate_examples() {
        let m = free(3, 1, 1.0);
        let f = ScalarField::from_values(&m, &[Some(0.5), Some(5.0), None]);
        let s = saturate(&f, 1.0);
        assert_eq!(s.to_options(), vec![Some(0.5), Some(1.0), Some(1.0)]);
        let below = ScalarField::from_values(&m, &[Some(0.1), Some(0.2), Some(0.3)]);
        assert_eq!(saturate(&below, 1.0), below);
    }

    #[test]
    fn descend_from_source_is_single_point() {
        let m = free(5, 5, 1.0);
        let f = propagate(&m, &[CellIndex::new(2, 2)], &VelocityField::uniform(&m), None).unwrap();
        let c = m.cell_to_world(CellIndex::new(2, 2));
        assert_eq!(descend_path(&f.field, c, 0.5).unwrap(), vec![c]);
    }

    #[test]
    fn descend_unreachable_and_bad_step() {
        let m = free(3, 3, 1.0);
        let f = ScalarField::from_values(&m, &[None; 9]);
        let p = WorldPoint::new(1.5, 1.5);
        assert_eq!(descend_path(&f, p, 0.5).unwrap_err(), EikonalError::Unreachable);
        assert!(matches!(descend_path(&f, p, 0.0), Err(EikonalError::BadStep(_))));
    }
}
