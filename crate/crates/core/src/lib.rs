#![cfg_attr(not(feature = "std"), no_std)]
#![doc = "Traversability-aware Fast Marching path planning on occupancy grids."]

extern crate alloc;

pub mod eikonal;
pub mod field;
pub mod grid;
pub mod math;
pub mod planner;
pub mod regions;
pub mod sim;
pub mod traversability;

pub use field::{LabeledField, ScalarField, VelocityField};
pub use grid::{Cell, CellIndex, GridError, GridMap, RayHit, WorldPoint};
pub use planner::{PlanError, PlanResult, Planner, PlannerConfig};
pub use regions::{CellLabel, Discretization, DiscretizeConfig, Region, RegionError, RegionGraph, RegionId, RegionSet};
pub use sim::{EpisodeRunner, Outcome, Perception, PerceptionMode, Pose, RunMetrics, SimConfig, SimError, World};
pub use traversability::{ObstacleTrack, TrackWindow, TraversabilityError, TraversabilityMap};
