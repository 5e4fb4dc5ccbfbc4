//! Online planning: velocity map, traversability-first wavefront and path
//! extraction.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eikonal::{self, EikonalError, Frontier, FrontierEntry, Key, MarchProblem, DEFAULT_EPSILON_F};
use crate::field::{ScalarField, VelocityField};
use crate::grid::{CellIndex, GridMap, WorldPoint};
use crate::math;
use crate::regions::{CellLabel, RegionSet};
use crate::traversability::TraversabilityMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("robot position is not in a passable cell")]
    StartBlocked,
    #[error("goal position is not in a passable cell")]
    GoalBlocked,
    #[error("goal is not reachable")]
    NoPath,
    #[error("inputs do not share the map's dimensions")]
    DimensionMismatch,
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Clearance beyond which the speed saturates, meters.
    pub d_sat: f64,
    /// Radius of the blocked disc around a dynamic obstacle, meters.
    pub dyn_obstacle_radius: f64,
    pub epsilon_f: f64,
    pub descent_step: f64,
    pub seed_min_clearance: f64,
}

impl PlannerConfig {
    pub fn for_resolution(resolution: f64) -> Self {
        Self {
            d_sat: 1.0_f64.max(2.0 * resolution),
            dyn_obstacle_radius: 0.3,
            epsilon_f: DEFAULT_EPSILON_F,
            descent_step: 0.5 * resolution,
            seed_min_clearance: 2.0 * resolution,
        }
    }
}

/// Which wavefront ordering to plan with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Planner {
    /// Traversability first, then arrival.
    #[serde(rename = "trfmm")]
    TrFmm,
    /// Plain arrival order, ignoring traversability.
    #[serde(rename = "fmm")]
    Fmm,
}

impl Planner {
    pub const ALL: [Planner; 2] = [Planner::TrFmm, Planner::Fmm];

    pub fn name(self) -> &'static str {
        match self {
            Planner::TrFmm => "trfmm",
            Planner::Fmm => "fmm",
        }
    }
}

impl fmt::Display for Planner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown planner {0:?}; expected trfmm or fmm")]
pub struct UnknownPlanner(pub alloc::string::String);

impl FromStr for Planner {
    type Err = UnknownPlanner;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trfmm" => Ok(Planner::TrFmm),
            "fmm" => Ok(Planner::Fmm),
            other => Err(UnknownPlanner(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// From the robot position to the goal.
    pub path: Vec<WorldPoint>,
    pub arrival: ScalarField,
    /// Per-region traversability the plan was made with.
    pub tr_values: Vec<f64>,
    pub plan_time_ms: f64,
}

/// Speed map: saturated clearance scaled to `(0, 1]`, zeroed inside a disc
/// around every dynamic obstacle and ramped back up over one more radius.
pub fn build_velocity_map(
    map: &GridMap,
    clearance: &ScalarField,
    dynamic_obstacles: &[WorldPoint],
    cfg: &PlannerConfig,
) -> VelocityField {
    let mut speeds: Vec<f64> = eikonal::saturate(clearance, cfg.d_sat)
        .raw()
        .iter()
        .map(|v| v / cfg.d_sat)
        .collect();
    let r = cfg.dyn_obstacle_radius;
    if r > 0.0 && !dynamic_obstacles.is_empty() {
        let mut factor = alloc::vec![1.0_f64; map.len()];
        let res = map.resolution();
        let reach = math::ceil(2.0 * r / res) as isize + 1;
        for p in dynamic_obstacles.iter().filter(|p| p.is_finite()) {
            let gc = math::floor((p.x - map.origin().x) / res) as isize;
            let gr = math::floor((p.y - map.origin().y) / res) as isize;
            for row in (gr - reach).max(0)..=(gr + reach).min(map.height() as isize - 1) {
                for col in (gc - reach).max(0)..=(gc + reach).min(map.width() as isize - 1) {
                    let c = CellIndex::new(col as usize, row as usize);
                    let d = map.cell_to_world(c).distance(p);
                    if d >= 2.0 * r {
                        continue;
                    }
                    let f = if d <= r { 0.0 } else { (d - r) / r };
                    let i = map.linear(c);
                    if f < factor[i] {
                        factor[i] = f;
                    }
                }
            }
        }
        for (s, f) in speeds.iter_mut().zip(&factor) {
            *s *= f;
        }
    }
    for s in &mut speeds {
        if *s < cfg.epsilon_f {
            *s = 0.0;
        }
    }
    VelocityField::from_speeds(map, speeds)
}

/// Frontier ordered by traversability descending, then arrival, then cell
/// index. One arrival heap per distinct traversability value.
#[derive(Debug, Default)]
pub struct TrFrontier {
    buckets: BTreeMap<Reverse<Key>, BinaryHeap<Reverse<(Key, usize)>>>,
}

impl TrFrontier {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Frontier for TrFrontier {
    fn push(&mut self, e: FrontierEntry) {
        self.buckets
            .entry(Reverse(Key(e.tr)))
            .or_default()
            .push(Reverse((Key(e.arrival), e.cell)));
    }

    fn pop(&mut self) -> Option<FrontierEntry> {
        let mut top = self.buckets.first_entry()?;
        let tr = top.key().0 .0;
        let Reverse((Key(arrival), cell)) = top.get_mut().pop()?;
        if top.get().is_empty() {
            top.remove();
        }
        Some(FrontierEntry { cell, arrival, tr })
    }
}

/// Whether `a` goes before `b`: higher traversability, or equal
/// traversability and lower arrival. Equal keys fall back to the lower cell
/// index.
pub fn precedes(a: &FrontierEntry, b: &FrontierEntry) -> bool {
    a.tr > b.tr
        || (a.tr == b.tr && a.arrival < b.arrival)
        || (a.tr == b.tr && a.arrival == b.arrival && a.cell < b.cell)
}

/// Inserts `entry` before the first element it precedes, or appends it.
pub fn frontier_insert(queue: &mut Vec<FrontierEntry>, entry: FrontierEntry) {
    let at = queue.iter().position(|e| precedes(&entry, e)).unwrap_or(queue.len());
    queue.insert(at, entry);
}

/// Sorted-list frontier built on [`frontier_insert`]. Linear time per
/// insertion; used as a reference ordering.
#[derive(Debug, Default)]
pub struct InsertionFrontier {
    pub queue: Vec<FrontierEntry>,
}

impl Frontier for InsertionFrontier {
    fn push(&mut self, entry: FrontierEntry) {
        frontier_insert(&mut self.queue, entry);
    }

    fn pop(&mut self) -> Option<FrontierEntry> {
        (!self.queue.is_empty()).then(|| self.queue.remove(0))
    }
}

/// Traversability-first wavefront from the robot to the goal.
pub fn plan(
    map: &GridMap,
    regions: &RegionSet,
    velocity: &VelocityField,
    tr_map: &TraversabilityMap,
    robot: WorldPoint,
    goal: WorldPoint,
    cfg: &PlannerConfig,
) -> Result<PlanResult, PlanError> {
    plan_with_frontier(map, regions, velocity, tr_map, robot, goal, cfg, &mut TrFrontier::new(), None)
}

/// [`plan`] with a caller-chosen frontier, optionally recording pop order.
#[allow(clippy::too_many_arguments)]
pub fn plan_with_frontier<Q: Frontier>(
    map: &GridMap,
    regions: &RegionSet,
    velocity: &VelocityField,
    tr_map: &TraversabilityMap,
    robot: WorldPoint,
    goal: WorldPoint,
    cfg: &PlannerConfig,
    frontier: &mut Q,
    trace: Option<&mut Vec<usize>>,
) -> Result<PlanResult, PlanError> {
    let clock = Clock::start();
    if regions.labels.len() != map.len() || tr_map.raster().len() != map.len() || velocity.speeds().len() != map.len() {
        return Err(PlanError::DimensionMismatch);
    }
    let (start, end) = endpoints(map, velocity, robot, goal, cfg)?;
    let expandable: Vec<bool> = regions.labels.iter().map(|l| *l != CellLabel::Unreachable).collect();
    if !expandable[map.linear(start)] {
        return Err(PlanError::StartBlocked);
    }
    if !expandable[map.linear(end)] {
        return Err(PlanError::GoalBlocked);
    }
    let problem = MarchProblem {
        width: map.width(),
        height: map.height(),
        resolution: map.resolution(),
        speed: velocity.speeds(),
        tr: Some(tr_map.raster()),
        expandable: Some(&expandable),
        epsilon_f: cfg.epsilon_f,
        stop_at: Some(map.linear(end)),
    };
    let out = eikonal::march(&problem, &[(map.linear(start), 0)], frontier, trace);
    let arrival = ScalarField::from_raw(map, out.values);
    finish(map, arrival, robot, goal, end, cfg, tr_map.regions.iter().map(|r| r.value).collect(), clock)
}

/// Baseline: plain arrival-ordered wavefront on the same velocity map.
pub fn plan_fmm(
    map: &GridMap,
    velocity: &VelocityField,
    robot: WorldPoint,
    goal: WorldPoint,
    cfg: &PlannerConfig,
) -> Result<PlanResult, PlanError> {
    let clock = Clock::start();
    if velocity.speeds().len() != map.len() {
        return Err(PlanError::DimensionMismatch);
    }
    let (start, end) = endpoints(map, velocity, robot, goal, cfg)?;
    let labeled = eikonal::propagate_with(map, &[start], velocity, Some(end), cfg.epsilon_f)?;
    finish(map, labeled.field, robot, goal, end, cfg, Vec::new(), clock)
}

/// Dispatches on `planner`.
#[allow(clippy::too_many_arguments)]
pub fn plan_by(
    planner: Planner,
    map: &GridMap,
    regions: &RegionSet,
    velocity: &VelocityField,
    tr_map: &TraversabilityMap,
    robot: WorldPoint,
    goal: WorldPoint,
    cfg: &PlannerConfig,
) -> Result<PlanResult, PlanError> {
    match planner {
        Planner::TrFmm => plan(map, regions, velocity, tr_map, robot, goal, cfg),
        Planner::Fmm => plan_fmm(map, velocity, robot, goal, cfg),
    }
}

fn endpoints(
    map: &GridMap,
    velocity: &VelocityField,
    robot: WorldPoint,
    goal: WorldPoint,
    cfg: &PlannerConfig,
) -> Result<(CellIndex, CellIndex), PlanError> {
    let passable = |c: CellIndex| map.is_free(c) && velocity.get(c) >= cfg.epsilon_f;
    let start = map
        .world_to_cell(robot)
        .ok()
        .filter(|c| passable(*c))
        .ok_or(PlanError::StartBlocked)?;
    let end = map
        .world_to_cell(goal)
        .ok()
        .filter(|c| passable(*c))
        .ok_or(PlanError::GoalBlocked)?;
    Ok((start, end))
}

fn finish(
    map: &GridMap,
    arrival: ScalarField,
    robot: WorldPoint,
    goal: WorldPoint,
    end: CellIndex,
    cfg: &PlannerConfig,
    tr_values: Vec<f64>,
    clock: Clock,
) -> Result<PlanResult, PlanError> {
    if arrival.get(end).is_none() {
        return Err(PlanError::NoPath);
    }
    let mut path = eikonal::descend_path(&arrival, map.cell_to_world(end), cfg.descent_step)?;
    path.reverse();
    // the descent ends at the robot cell center; start from the robot itself
    if path.len() > 1 {
        path[0] = robot;
    } else {
        path.insert(0, robot);
    }
    // and end at the goal itself, which shares the last cell
    if path.last() != Some(&goal) {
        path.push(goal);
    }
    Ok(PlanResult {
        path,
        arrival,
        tr_values,
        plan_time_ms: clock.elapsed_ms(),
    })
}

#[cfg(feature = "std")]
struct Clock(std::time::Instant);

#[cfg(feature = "std")]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }

    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(not(feature = "std"))]
struct Clock;

#[cfg(not(feature = "std"))]
impl Clock {
    fn start() -> Self {
        Clock
    }

    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;

    fn entry(cell: usize, tr: f64, arrival: f64) -> FrontierEntry {
        FrontierEntry { cell, arrival, tr }
    }

    #[test]
    fn insertion_rule() {
        let mut q = alloc::vec![entry(0, 0.9, 5.0)];
        frontier_insert(&mut q, entry(1, 1.0, 9.0));
        assert_eq!(q[0].cell, 1);

        let mut q = alloc::vec![entry(0, 0.9, 5.0)];
        frontier_insert(&mut q, entry(1, 0.9, 4.0));
        assert_eq!(q[0].cell, 1);

        let mut q = alloc::vec![entry(0, 0.9, 5.0)];
        frontier_insert(&mut q, entry(1, 0.9, 6.0));
        assert_eq!(q[1].cell, 1);
    }

    #[test]
    fn bucket_frontier_order() {
        let mut f = TrFrontier::new();
        for e in [entry(3, 0.5, 1.0), entry(1, 0.9, 7.0), entry(2, 0.9, 2.0), entry(0, 0.5, 1.0)] {
            f.push(e);
        }
        let order: Vec<usize> = core::iter::from_fn(|| f.pop()).map(|e| e.cell).collect();
        assert_eq!(order, alloc::vec![2, 1, 0, 3]);
    }

    #[test]
    fn planner_names_round_trip() {
        for p in Planner::ALL {
            assert_eq!(p.name().parse::<Planner>().unwrap(), p);
        }
        assert!("astar".parse::<Planner>().is_err());
    }

    #[test]
    fn velocity_plateau_disc_and_ramp() {
        let map = GridMap::filled(60, 60, 0.1, WorldPoint::default(), Cell::Free).unwrap();
        let clearance = eikonal::obstacle_distance(&map);
        let cfg = PlannerConfig::for_resolution(0.1);
        let v = build_velocity_map(&map, &clearance, &[], &cfg);
        assert_eq!(v.get(CellIndex::new(30, 30)), 1.0);

        let obstacle = map.cell_to_world(CellIndex::new(30, 30));
        let v = build_velocity_map(&map, &clearance, &[obstacle], &cfg);
        assert_eq!(v.get(CellIndex::new(30, 30)), 0.0);
        // a cell center 1.5 radii from the obstacle
        let v = build_velocity_map(&map, &clearance, &[WorldPoint::new(obstacle.x - 0.45, obstacle.y)], &cfg);
        let c = CellIndex::new(30, 30);
        assert!((v.get(c) - 0.5).abs() < 1e-9, "{}", v.get(c));
    }
}
