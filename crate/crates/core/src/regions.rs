//! Offline discretization of free space into regions.
//!
//! Seeds are clearance maxima picked greedily: take the highest remaining
//! cell of the obstacle-distance field, then zero every cell within a disc
//! whose radius is that cell's clearance. A labeled multi-source wavefront
//! from the seeds partitions free space, and regions whose cells touch
//! become neighbors in the [`RegionGraph`].

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::eikonal::{self, EikonalError};
use crate::field::{LabeledField, ScalarField, VelocityField};
use crate::grid::{Cell, CellIndex, GridMap};
use crate::math;

pub type RegionId = u32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegionError {
    #[error("map has no free cells")]
    EmptyFreeSpace,
    #[error("no seeds given")]
    NoSeeds,
    #[error("seed ({}, {}) is not a free cell", .0.col, .0.row)]
    SeedOccupied(CellIndex),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub cell: CellIndex,
    /// Distance to the nearest static obstacle, meters.
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub seed: CellIndex,
    pub clearance: f64,
    pub cells: Vec<CellIndex>,
}

impl Region {
    pub fn area_cells(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Occupied,
    /// Free, but no seed's wavefront reaches it. Excluded from planning.
    Unreachable,
    Region(RegionId),
}

/// Partition of the free cells of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    pub labels: Vec<CellLabel>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn label(&self, c: CellIndex) -> CellLabel {
        if c.col >= self.width || c.row >= self.height {
            return CellLabel::Occupied;
        }
        self.labels[c.row * self.width + c.col]
    }

    pub fn region_of(&self, c: CellIndex) -> Option<RegionId> {
        match self.label(c) {
            CellLabel::Region(id) => Some(id),
            _ => None,
        }
    }

    #[inline]
    pub fn region_of_linear(&self, i: usize) -> Option<RegionId> {
        match self.labels[i] {
            CellLabel::Region(id) => Some(id),
            _ => None,
        }
    }

    pub fn region(&self, id: RegionId) -> Option<&Region> {
        self.regions.get(id as usize)
    }

    pub fn unreachable_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == CellLabel::Unreachable).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEdge {
    /// Always `a < b`.
    pub a: RegionId,
    pub b: RegionId,
    pub length: f64,
}

/// Undirected region adjacency graph with seed-to-seed edge lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub node_count: usize,
    pub edges: Vec<RegionEdge>,
    adjacency: Vec<Vec<(RegionId, f64)>>,
}

impl RegionGraph {
    pub fn from_edges(node_count: usize, mut edges: Vec<RegionEdge>) -> Self {
        edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &edges {
            adjacency[e.a as usize].push((e.b, e.length));
            adjacency[e.b as usize].push((e.a, e.length));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| x.0.cmp(&y.0));
        }
        Self {
            node_count,
            edges,
            adjacency,
        }
    }

    pub fn neighbors(&self, id: RegionId) -> &[(RegionId, f64)] {
        self.adjacency.get(id as usize).map_or(&[], |v| v.as_slice())
    }

    pub fn edge_length(&self, a: RegionId, b: RegionId) -> Option<f64> {
        self.neighbors(a).iter().find(|(n, _)| *n == b).map(|(_, l)| *l)
    }

    pub fn contains(&self, id: RegionId) -> bool {
        (id as usize) < self.node_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizeConfig {
    /// Seed selection stops once the best remaining clearance drops below
    /// this (meters).
    pub seed_min_clearance: f64,
    /// Regions larger than this many cells are re-seeded on a regular grid.
    pub max_region_area: Option<usize>,
}

impl DiscretizeConfig {
    pub fn for_resolution(resolution: f64) -> Self {
        Self {
            seed_min_clearance: 2.0 * resolution,
            max_region_area: None,
        }
    }
}

/// Everything the offline phase produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Distance to static obstacles with `F = 1`.
    pub clearance: ScalarField,
    pub seeds: Vec<Seed>,
    pub regions: RegionSet,
    pub labeled: LabeledField,
    pub graph: RegionGraph,
}

pub fn discretize(map: &GridMap, cfg: &DiscretizeConfig) -> Result<Discretization, RegionError> {
    if map.free_count() == 0 {
        return Err(RegionError::EmptyFreeSpace);
    }
    let clearance = eikonal::obstacle_distance(map);
    let mut seeds = find_seeds(map, &clearance, cfg.seed_min_clearance);
    let cells: Vec<CellIndex> = seeds.iter().map(|s| s.cell).collect();
    let (mut regions, mut labeled) = partition(map, &cells)?;
    if let Some(max_area) = cfg.max_region_area {
        if regions.regions.iter().any(|r| r.area_cells() > max_area) {
            let cells = subdivide_seeds(&regions, max_area);
            seeds = cells
                .iter()
                .map(|&c| Seed {
                    cell: c,
                    clearance: clearance.get(c).unwrap_or(0.0),
                })
                .collect();
            let (r, l) = partition(map, &cells)?;
            regions = r;
            labeled = l;
        }
    }
    let graph = build_graph(&regions, &labeled);
    Ok(Discretization {
        clearance,
        seeds,
        regions,
        labeled,
        graph,
    })
}

/// Greedy clearance maxima, ordered by decreasing clearance.
///
/// The first maximum is always taken, so any map with free space yields a
/// seed. Free components left without a seed by the threshold get their own
/// best cell afterwards.
pub fn find_seeds(map: &GridMap, clearance: &ScalarField, seed_min_clearance: f64) -> Vec<Seed> {
    let free: Vec<usize> = (0..map.len()).filter(|&i| map.cells()[i] == Cell::Free).collect();
    if free.is_empty() {
        return Vec::new();
    }
    let value = |i: usize| clearance.get_linear(i).unwrap_or(0.0);
    let mut order = free.clone();
    order.sort_by(|&a, &b| by_value_desc(value(a), value(b)).then(a.cmp(&b)));

    let mut cleared = vec![false; map.len()];
    let mut seeds = Vec::new();
    for &i in &order {
        if cleared[i] {
            continue;
        }
        let v = value(i);
        if !seeds.is_empty() && v < seed_min_clearance {
            break;
        }
        let c = map.index_of(i);
        seeds.push(Seed { cell: c, clearance: v });
        clear_disc(map, c, v, &mut cleared);
    }

    let components = free_components(map);
    let mut has_seed = vec![false; components.count];
    for s in &seeds {
        if let Some(k) = components.ids[map.linear(s.cell)] {
            has_seed[k] = true;
        }
    }
    let mut best: Vec<Option<usize>> = vec![None; components.count];
    for &i in &order {
        let k = components.ids[i].expect("free cell has a component");
        if !has_seed[k] && best[k].is_none() {
            best[k] = Some(i);
        }
    }
    for i in best.into_iter().flatten() {
        seeds.push(Seed {
            cell: map.index_of(i),
            clearance: value(i),
        });
    }
    seeds.sort_by(|a, b| by_value_desc(a.clearance, b.clearance).then(map.linear(a.cell).cmp(&map.linear(b.cell))));
    seeds
}

fn by_value_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn clear_disc(map: &GridMap, center: CellIndex, radius: f64, cleared: &mut [bool]) {
    let res = map.resolution();
    let reach = math::floor(radius / res) as isize + 1;
    let (c0, r0) = (center.col as isize, center.row as isize);
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (c, r) = (c0 + dc, r0 + dr);
            if c < 0 || r < 0 || c as usize >= map.width() || r as usize >= map.height() {
                continue;
            }
            if math::hypot(dc as f64, dr as f64) * res <= radius + 1e-9 * res {
                cleared[r as usize * map.width() + c as usize] = true;
            }
        }
    }
    cleared[map.linear(center)] = true;
}

pub(crate) struct Components {
    pub ids: Vec<Option<usize>>,
    pub count: usize,
}

/// 4-connected components of free cells.
pub(crate) fn free_components(map: &GridMap) -> Components {
    let mut ids = vec![None; map.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..map.len() {
        if map.cells()[start] != Cell::Free || ids[start].is_some() {
            continue;
        }
        ids[start] = Some(count);
        stack.push(start);
        while let Some(i) = stack.pop() {
            let c = map.index_of(i);
            for (nc, nr) in eikonal::neighbors4(c.col, c.row, map.width(), map.height()) {
                let j = nr * map.width() + nc;
                if map.cells()[j] == Cell::Free && ids[j].is_none() {
                    ids[j] = Some(count);
                    stack.push(j);
                }
            }
        }
        count += 1;
    }
    Components { ids, count }
}

/// Labels free space by the seed whose `F = 1` wavefront arrives first.
/// Region ids are positions in `seeds`.
pub fn partition(map: &GridMap, seeds: &[CellIndex]) -> Result<(RegionSet, LabeledField), RegionError> {
    if seeds.is_empty() {
        return Err(RegionError::NoSeeds);
    }
    if let Some(bad) = seeds.iter().find(|s| !map.is_free(**s)) {
        return Err(RegionError::SeedOccupied(*bad));
    }
    let labeled = eikonal::propagate(map, seeds, &VelocityField::uniform(map), None)?;
    let mut regions: Vec<Region> = seeds
        .iter()
        .enumerate()
        .map(|(id, &seed)| Region {
            id: id as RegionId,
            seed,
            clearance: 0.0,
            cells: Vec::new(),
        })
        .collect();
    let mut labels = Vec::with_capacity(map.len());
    for i in 0..map.len() {
        let label = match (map.cells()[i], labeled.labels[i]) {
            (Cell::Occupied, _) => CellLabel::Occupied,
            (Cell::Free, None) => CellLabel::Unreachable,
            (Cell::Free, Some(id)) => {
                regions[id as usize].cells.push(map.index_of(i));
                CellLabel::Region(id)
            }
        };
        labels.push(label);
    }
    let clearance = eikonal::obstacle_distance(map);
    for r in &mut regions {
        r.clearance = clearance.get(r.seed).unwrap_or(0.0);
    }
    Ok((
        RegionSet {
            width: map.width(),
            height: map.height(),
            regions,
            labels,
        },
        labeled,
    ))
}

/// Adjacency from 4-neighboring cells with different labels. The edge
/// length is the smallest `arrival(a) + arrival(b)` over such boundary pairs,
/// floored at one cell so lengths stay positive.
pub fn build_graph(set: &RegionSet, labeled: &LabeledField) -> RegionGraph {
    let (w, h) = (set.width, set.height);
    let res = labeled.field.resolution();
    let mut best: BTreeMap<(RegionId, RegionId), f64> = BTreeMap::new();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let Some(ra) = set.region_of_linear(i) else { continue };
            for j in [(col + 1 < w).then(|| i + 1), (row + 1 < h).then(|| i + w)].into_iter().flatten() {
                let Some(rb) = set.region_of_linear(j) else { continue };
                if ra == rb {
                    continue;
                }
                let (Some(va), Some(vb)) = (labeled.field.get_linear(i), labeled.field.get_linear(j)) else {
                    continue;
                };
                let key = (ra.min(rb), ra.max(rb));
                let len = (va + vb).max(res);
                best.entry(key)
                    .and_modify(|l| {
                        if len < *l {
                            *l = len;
                        }
                    })
                    .or_insert(len);
            }
        }
    }
    let edges = best
        .into_iter()
        .map(|((a, b), length)| RegionEdge { a, b, length })
        .collect();
    RegionGraph::from_edges(set.regions.len(), edges)
}

/// Replaces the seed of every region larger than `max_area` cells with a
/// regular grid of interior points spaced `ceil(sqrt(max_area))` cells.
pub fn subdivide_seeds(set: &RegionSet, max_area: usize) -> Vec<CellIndex> {
    let spacing = (math::ceil(math::sqrt(max_area.max(1) as f64)) as usize).max(1);
    let mut seeds = Vec::new();
    for r in &set.regions {
        if r.area_cells() <= max_area {
            seeds.push(r.seed);
            continue;
        }
        let min_c = r.cells.iter().map(|c| c.col).min().unwrap_or(0);
        let max_c = r.cells.iter().map(|c| c.col).max().unwrap_or(0);
        let min_r = r.cells.iter().map(|c| c.row).min().unwrap_or(0);
        let max_r = r.cells.iter().map(|c| c.row).max().unwrap_or(0);
        let before = seeds.len();
        let mut row = min_r + spacing / 2;
        while row <= max_r {
            let mut col = min_c + spacing / 2;
            while col <= max_c {
                let c = CellIndex::new(col, row);
                if set.region_of(c) == Some(r.id) {
                    seeds.push(c);
                }
                col += spacing;
            }
            row += spacing;
        }
        if seeds.len() == before {
            seeds.push(r.seed);
        }
    }
    seeds
}
