//! Cached region partitions.

use serde::{Deserialize, Serialize};
use trfmm_core::eikonal::obstacle_distance;
use trfmm_core::regions::{self, RegionEdge, Seed};
use trfmm_core::{CellIndex, CellLabel, Discretization, RegionId, GridMap, RegionError, WorldPoint};

use crate::io::map_digest;

pub const ARTIFACT_FORMAT: &str = "trfmm-regions/1";

/// Label codes in the run-length encoding.
pub const LABEL_OCCUPIED: i64 = -2;
pub const LABEL_UNREACHABLE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub id: RegionId,
    pub seed: CellIndex,
    pub clearance: f64,
    pub area_cells: usize,
}

/// Partition summary: region list, graph and per-cell labels as
/// `[label, run]` pairs in row-major order, row 0 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionArtifact {
    pub format: String,
    pub map_digest: String,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: WorldPoint,
    pub regions: Vec<RegionSummary>,
    pub edges: Vec<RegionEdge>,
    pub labels: Vec<(i64, usize)>,
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("artifact format {0:?} is not supported")]
    Format(String),
    #[error("artifact was built for a different map")]
    Stale,
    #[error(transparent)]
    Region(#[from] RegionError),
}

fn label_code(l: CellLabel) -> i64 {
    match l {
        CellLabel::Occupied => LABEL_OCCUPIED,
        CellLabel::Unreachable => LABEL_UNREACHABLE,
        CellLabel::Region(id) => id as i64,
    }
}

pub fn run_length(labels: &[CellLabel]) -> Vec<(i64, usize)> {
    let mut runs: Vec<(i64, usize)> = Vec::new();
    for l in labels {
        let code = label_code(*l);
        match runs.last_mut() {
            Some((c, n)) if *c == code => *n += 1,
            _ => runs.push((code, 1)),
        }
    }
    runs
}

pub fn expand_runs(runs: &[(i64, usize)]) -> Vec<i64> {
    runs.iter().flat_map(|(c, n)| std::iter::repeat_n(*c, *n)).collect()
}

impl RegionArtifact {
    pub fn new(map: &GridMap, d: &Discretization) -> Self {
        Self {
            format: ARTIFACT_FORMAT.into(),
            map_digest: map_digest(map),
            width: map.width(),
            height: map.height(),
            resolution: map.resolution(),
            origin: map.origin(),
            regions: d
                .regions
                .regions
                .iter()
                .map(|r| RegionSummary {
                    id: r.id,
                    seed: r.seed,
                    clearance: r.clearance,
                    area_cells: r.area_cells(),
                })
                .collect(),
            edges: d.graph.edges.clone(),
            labels: run_length(&d.regions.labels),
        }
    }

    /// Rebuilds the full discretization from the stored seeds. Fails if the
    /// map differs from the one the artifact was made from.
    pub fn restore(&self, map: &GridMap) -> Result<Discretization, ArtifactError> {
        if self.format != ARTIFACT_FORMAT {
            return Err(ArtifactError::Format(self.format.clone()));
        }
        if self.map_digest != map_digest(map) {
            return Err(ArtifactError::Stale);
        }
        let clearance = obstacle_distance(map);
        let seeds: Vec<Seed> = self
            .regions
            .iter()
            .map(|r| Seed {
                cell: r.seed,
                clearance: r.clearance,
            })
            .collect();
        let cells: Vec<CellIndex> = seeds.iter().map(|s| s.cell).collect();
        let (set, labeled) = regions::partition(map, &cells)?;
        let graph = regions::build_graph(&set, &labeled);
        if run_length(&set.labels) != self.labels {
            return Err(ArtifactError::Stale);
        }
        Ok(Discretization {
            clearance,
            seeds,
            regions: set,
            labeled,
            graph,
        })
    }
}
