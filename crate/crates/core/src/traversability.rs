//! Online per-region scoring from observed obstacle motion.
//!
//! Every region gets a deviation score (how direct a route through it is),
//! an occupation and dynamism figure from the obstacle trajectory cells it
//! holds, and a dispersion estimate of how soon obstacles from occupied
//! regions can reach it. The combined value `Tr` orders the planner's
//! wavefront: higher is preferred.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::eikonal::Key;
use crate::field::ScalarField;
use crate::grid::CellIndex;
use crate::regions::{CellLabel, Region, RegionGraph, RegionId, RegionSet};

/// Default track memory, seconds.
pub const DEFAULT_TRACK_WINDOW: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraversabilityError {
    #[error("region {0} is not in the graph")]
    UnknownRegion(RegionId),
    #[error("region {0} holds no obstacle trajectories")]
    NoObstaclesInSource(RegionId),
    #[error("goal region is not reachable from the robot region")]
    GoalUnreachableFromRobot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub cell: CellIndex,
}

/// Observed positions of one moving obstacle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObstacleTrack {
    pub id: u32,
    samples: Vec<TrackSample>,
}

impl ObstacleTrack {
    pub fn new(id: u32) -> Self {
        Self {
            id,
            samples: Vec::new(),
        }
    }

    /// Appends a sample. Returns false (and drops it) unless `t` is later
    /// than the last sample.
    pub fn push(&mut self, t: f64, cell: CellIndex) -> bool {
        if !t.is_finite() || self.samples.last().is_some_and(|s| s.t >= t) {
            return false;
        }
        self.samples.push(TrackSample { t, cell });
        true
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn latest(&self) -> Option<TrackSample> {
        self.samples.last().copied()
    }

    /// Drops samples older than `cutoff`.
    pub fn forget_before(&mut self, cutoff: f64) {
        let keep_from = self.samples.partition_point(|s| s.t < cutoff);
        self.samples.drain(..keep_from);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionDynamics {
    pub traj_cells: BTreeSet<CellIndex>,
    pub a_tau: usize,
    pub occupation: f64,
    pub dynamism: f64,
}

/// Dijkstra distances over the region graph from the robot region, the goal
/// region and every obstacle-containing region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTrees {
    pub from_robot: Vec<Option<f64>>,
    pub from_goal: Vec<Option<f64>>,
    pub from_obstacle_regions: Vec<(RegionId, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTraversability {
    /// `D_ri + D_gi`; `None` if either side is unreachable.
    pub d_rig: Option<f64>,
    pub deviation: f64,
    pub p_plus: f64,
    pub d_plus: Option<f64>,
    /// Obstacle region the dispersion estimate comes from.
    pub source: Option<RegionId>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversabilityMap {
    pub width: usize,
    pub height: usize,
    pub direct_distance: f64,
    pub regions: Vec<RegionTraversability>,
    pub dynamics: Vec<RegionDynamics>,
    raster: Vec<f64>,
}

impl TraversabilityMap {
    /// Every region scored `value`, as if the world held no obstacles and
    /// every route were equally direct.
    pub fn uniform(set: &RegionSet, value: f64) -> Self {
        Self::from_values(set, &vec![value; set.len()])
    }

    /// Map with explicit per-region values and no dynamics.
    pub fn from_values(set: &RegionSet, values: &[f64]) -> Self {
        assert_eq!(values.len(), set.len(), "one value per region");
        let regions = values
            .iter()
            .map(|&v| RegionTraversability {
                d_rig: None,
                deviation: v,
                p_plus: 0.0,
                d_plus: None,
                source: None,
                value: v,
            })
            .collect();
        Self::assemble(set, 0.0, regions, vec![RegionDynamics::default(); set.len()])
    }

    fn assemble(
        set: &RegionSet,
        direct_distance: f64,
        regions: Vec<RegionTraversability>,
        dynamics: Vec<RegionDynamics>,
    ) -> Self {
        let raster = set
            .labels
            .iter()
            .map(|l| match l {
                CellLabel::Region(id) => regions[*id as usize].value,
                _ => 0.0,
            })
            .collect();
        Self {
            width: set.width,
            height: set.height,
            direct_distance,
            regions,
            dynamics,
            raster,
        }
    }

    pub fn value(&self, id: RegionId) -> Option<f64> {
        self.regions.get(id as usize).map(|r| r.value)
    }

    /// Per-cell expansion; 0 on occupied and unreachable cells.
    pub fn raster(&self) -> &[f64] {
        &self.raster
    }

    pub fn cell_value(&self, c: CellIndex) -> f64 {
        if c.col >= self.width || c.row >= self.height {
            return 0.0;
        }
        self.raster[c.row * self.width + c.col]
    }
}

/// Shortest distances over edge lengths from `root`; `None` marks regions
/// in other components.
pub fn region_dijkstra(graph: &RegionGraph, root: RegionId) -> Result<Vec<Option<f64>>, TraversabilityError> {
    if !graph.contains(root) {
        return Err(TraversabilityError::UnknownRegion(root));
    }
    let mut dist: Vec<Option<f64>> = vec![None; graph.node_count];
    let mut done = vec![false; graph.node_count];
    let mut heap = BinaryHeap::new();
    dist[root as usize] = Some(0.0);
    heap.push(Reverse((Key(0.0), root)));
    while let Some(Reverse((Key(d), u))) = heap.pop() {
        if done[u as usize] {
            continue;
        }
        done[u as usize] = true;
        for &(v, len) in graph.neighbors(u) {
            let nd = d + len;
            if dist[v as usize].is_none_or(|old| nd < old) {
                dist[v as usize] = Some(nd);
                heap.push(Reverse((Key(nd), v)));
            }
        }
    }
    Ok(dist)
}

/// Trajectory cells per region from samples with `now - window <= t <= now`.
pub fn accumulate_tracks(tracks: &[ObstacleTrack], set: &RegionSet, window: f64, now: f64) -> Vec<BTreeSet<CellIndex>> {
    let mut cells = vec![BTreeSet::new(); set.len()];
    for track in tracks {
        for s in track.samples() {
            if s.t < now - window || s.t > now {
                continue;
            }
            if let Some(id) = set.region_of(s.cell) {
                cells[id as usize].insert(s.cell);
            }
        }
    }
    cells
}

/// Mean clearance over the trajectory cells relative to the mean over the
/// whole region, clamped to `[0, 1]`.
pub fn occupation(region: &Region, traj_cells: &BTreeSet<CellIndex>, clearance: &ScalarField) -> f64 {
    if traj_cells.is_empty() || region.cells.is_empty() {
        return 0.0;
    }
    let mean = |cells: &mut dyn Iterator<Item = &CellIndex>| {
        let (sum, n) = cells.fold((0.0, 0usize), |(s, n), c| (s + clearance.get(*c).unwrap_or(0.0), n + 1));
        sum / n as f64
    };
    let region_mean = mean(&mut region.cells.iter());
    if region_mean <= 0.0 {
        return 0.0;
    }
    (mean(&mut traj_cells.iter()) / region_mean).clamp(0.0, 1.0)
}

/// Fraction of the region covered by trajectory cells.
pub fn dynamism(region: &Region, traj_cells: &BTreeSet<CellIndex>) -> f64 {
    if region.cells.is_empty() {
        return 0.0;
    }
    (traj_cells.len() as f64 / region.area_cells() as f64).clamp(0.0, 1.0)
}

/// Probability that obstacles of a region with dynamism `p` disperse out
/// of it.
pub fn dispersion_probability(p: f64) -> f64 {
    p * p
}

/// Dispersion probability of region `j`'s obstacles.
pub fn dispersion(j: RegionId, dynamics: &[RegionDynamics]) -> Result<f64, TraversabilityError> {
    match dynamics.get(j as usize) {
        Some(d) if d.a_tau > 0 => Ok(dispersion_probability(d.dynamism)),
        _ => Err(TraversabilityError::NoObstaclesInSource(j)),
    }
}

/// Nearest obstacle region to `i` by penalized distance
/// `D^j(i) * (1 + P^j)`. Returns `(D_plus, P_plus, j*)`; ties keep the
/// lower `j`.
pub fn effective_obstacle_distance(
    i: RegionId,
    trees: &DistanceTrees,
    dynamics: &[RegionDynamics],
) -> (Option<f64>, f64, Option<RegionId>) {
    let mut best: Option<(f64, f64, RegionId)> = None;
    for (j, dist) in &trees.from_obstacle_regions {
        let Some(d) = dist.get(i as usize).copied().flatten() else { continue };
        let Ok(p) = dispersion(*j, dynamics) else { continue };
        let candidate = d * (1.0 + p);
        let better = match best {
            None => true,
            Some((b, _, bj)) => candidate < b || (candidate == b && *j < bj),
        };
        if better {
            best = Some((candidate, p, *j));
        }
    }
    match best {
        Some((d, p, j)) => (Some(d), p, Some(j)),
        None => (None, 0.0, None),
    }
}

/// `direct / D_rig`, with `D_rig` floored at `direct`.
pub fn deviation_score(d_rig: f64, direct_distance: f64) -> f64 {
    if d_rig <= direct_distance {
        1.0
    } else {
        direct_distance / d_rig
    }
}

/// Combines deviation and dispersion risk. `occupation` is the occupation
/// of the region the dispersion estimate comes from. When the robot is
/// closer than any obstacle (`d_ri < d_plus`) the deviation is kept as is.
pub fn traversability(deviation: f64, d_ri: Option<f64>, d_plus: Option<f64>, p_plus: f64, occupation: f64) -> f64 {
    let Some(d_ri) = d_ri else { return 0.0 };
    let value = match d_plus {
        Some(d_plus) if d_ri >= d_plus => deviation * (1.0 - occupation * p_plus),
        _ => deviation,
    };
    value.clamp(0.0, 1.0)
}

/// Track window applied by [`build_traversability_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackWindow {
    pub window: f64,
    pub now: f64,
}

impl TrackWindow {
    pub fn at(now: f64) -> Self {
        Self {
            window: DEFAULT_TRACK_WINDOW,
            now,
        }
    }
}

pub fn region_dynamics(
    set: &RegionSet,
    traj: Vec<BTreeSet<CellIndex>>,
    clearance: &ScalarField,
) -> Vec<RegionDynamics> {
    set.regions
        .iter()
        .zip(traj)
        .map(|(r, cells)| RegionDynamics {
            a_tau: cells.len(),
            occupation: occupation(r, &cells, clearance),
            dynamism: dynamism(r, &cells),
            traj_cells: cells,
        })
        .collect()
}

pub fn distance_trees(
    graph: &RegionGraph,
    robot_region: RegionId,
    goal_region: RegionId,
    dynamics: &[RegionDynamics],
) -> Result<DistanceTrees, TraversabilityError> {
    let from_robot = region_dijkstra(graph, robot_region)?;
    let from_goal = region_dijkstra(graph, goal_region)?;
    let mut from_obstacle_regions = Vec::new();
    for (j, d) in dynamics.iter().enumerate() {
        if d.a_tau > 0 {
            let j = j as RegionId;
            from_obstacle_regions.push((j, region_dijkstra(graph, j)?));
        }
    }
    Ok(DistanceTrees {
        from_robot,
        from_goal,
        from_obstacle_regions,
    })
}

/// Scores every region for a robot in `robot_region` heading to
/// `goal_region`.
pub fn build_traversability_map(
    set: &RegionSet,
    graph: &RegionGraph,
    tracks: &[ObstacleTrack],
    window: TrackWindow,
    robot_region: RegionId,
    goal_region: RegionId,
    clearance: &ScalarField,
) -> Result<TraversabilityMap, TraversabilityError> {
    let traj = accumulate_tracks(tracks, set, window.window, window.now);
    let dynamics = region_dynamics(set, traj, clearance);
    let trees = distance_trees(graph, robot_region, goal_region, &dynamics)?;
    if trees.from_robot[goal_region as usize].is_none() {
        return Err(TraversabilityError::GoalUnreachableFromRobot);
    }
    let d_rig: Vec<Option<f64>> = trees
        .from_robot
        .iter()
        .zip(&trees.from_goal)
        .map(|(r, g)| Some((*r)? + (*g)?))
        .collect();
    let direct = d_rig
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, &d| m.min(d))
        .max(clearance.resolution());

    let regions = (0..set.len())
        .map(|i| {
            let id = i as RegionId;
            let (d_plus, p_plus, source) = effective_obstacle_distance(id, &trees, &dynamics);
            let Some(through) = d_rig[i] else {
                return RegionTraversability {
                    d_rig: None,
                    deviation: 0.0,
                    p_plus,
                    d_plus,
                    source,
                    value: 0.0,
                };
            };
            let deviation = deviation_score(through, direct);
            let occ = source.map_or(0.0, |j| dynamics[j as usize].occupation);
            RegionTraversability {
                d_rig: Some(through),
                deviation,
                p_plus,
                d_plus,
                source,
                value: traversability(deviation, trees.from_robot[i], d_plus, p_plus, occ),
            }
        })
        .collect();
    Ok(TraversabilityMap::assemble(set, direct, regions, dynamics))
}
