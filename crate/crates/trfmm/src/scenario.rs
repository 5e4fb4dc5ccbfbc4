//! Scenario and track files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trfmm_core::sim::{AgentParams, AgentSpawn, RobotParams};
use trfmm_core::traversability::{ObstacleTrack, DEFAULT_TRACK_WINDOW};
use trfmm_core::{
    regions, Discretization, DiscretizeConfig, GridMap, Perception, PerceptionMode, Planner, Pose, RegionError,
    SimConfig, World, WorldPoint,
};

use crate::io::{load_map, MapError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("goal index {index} out of range ({count} goals)")]
    GoalIndex { index: usize, count: usize },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Tunables shared by every episode of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub dt: f64,
    pub replan_period: f64,
    pub timeout: f64,
    pub sensor_range: f64,
    /// Field of view for line-of-sight perception, radians.
    pub fov: f64,
    pub track_window: f64,
    pub preroll_fraction: f64,
    pub robot: Option<RobotParams>,
    pub agent: Option<AgentParams>,
    pub seed_min_clearance: Option<f64>,
    pub max_region_area: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let p = Perception::line_of_sight();
        Self {
            dt: 0.05,
            replan_period: 0.1,
            timeout: 300.0,
            sensor_range: p.sensor_range,
            fov: p.fov,
            track_window: DEFAULT_TRACK_WINDOW,
            preroll_fraction: 0.0,
            robot: None,
            agent: None,
            seed_min_clearance: None,
            max_region_area: None,
        }
    }
}

/// A map with a robot start, candidate goals and agent spawns. `map` is
/// resolved relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub map: PathBuf,
    /// Required for PGM maps; ASCII maps carry their own.
    #[serde(default)]
    pub resolution: Option<f64>,
    #[serde(default)]
    pub origin: WorldPoint,
    pub robot_start: Pose,
    pub goals: Vec<WorldPoint>,
    #[serde(default)]
    pub agents: Vec<AgentSpawn>,
    #[serde(default)]
    pub settings: Settings,
}

/// A scenario with its map loaded.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub map: GridMap,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<LoadedScenario, ScenarioError> {
        let mut scenario: Scenario = read_json(path)?;
        if scenario.map.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            scenario.map = base.join(&scenario.map);
        }
        let map = load_map(&scenario.map, scenario.resolution, scenario.origin)?;
        Ok(LoadedScenario { scenario, map })
    }

    pub fn discretize_config(&self, resolution: f64) -> DiscretizeConfig {
        let mut cfg = DiscretizeConfig::for_resolution(resolution);
        if let Some(c) = self.settings.seed_min_clearance {
            cfg.seed_min_clearance = c;
        }
        cfg.max_region_area = self.settings.max_region_area;
        cfg
    }

    /// Episode config for one goal. Validation against the map happens when
    /// the episode starts.
    pub fn sim_config(
        &self,
        resolution: f64,
        goal: usize,
        planner: Planner,
        perception: PerceptionMode,
        seed: u64,
    ) -> Result<SimConfig, ScenarioError> {
        let g = *self.goals.get(goal).ok_or(ScenarioError::GoalIndex {
            index: goal,
            count: self.goals.len(),
        })?;
        let s = &self.settings;
        let mut cfg = SimConfig::new(self.robot_start, g, resolution);
        cfg.agents = self.agents.clone();
        cfg.seed = seed;
        cfg.dt = s.dt;
        cfg.replan_period = s.replan_period;
        cfg.timeout = s.timeout;
        cfg.planner = planner;
        cfg.perception = Perception {
            mode: perception,
            sensor_range: s.sensor_range,
            fov: s.fov,
        };
        cfg.track_window = s.track_window;
        cfg.preroll_fraction = s.preroll_fraction;
        if let Some(r) = s.robot {
            cfg.robot = r;
        }
        if let Some(a) = s.agent {
            cfg.agent = a;
        }
        cfg.planner_cfg.dyn_obstacle_radius = cfg.robot.radius + cfg.agent.radius;
        Ok(cfg)
    }
}

impl LoadedScenario {
    pub fn world(&self) -> Result<World, ScenarioError> {
        let d: Discretization = regions::discretize(&self.map, &self.scenario.discretize_config(self.map.resolution()))?;
        Ok(World {
            map: self.map.clone(),
            discretization: d,
        })
    }

    pub fn sim_config(
        &self,
        goal: usize,
        planner: Planner,
        perception: PerceptionMode,
        seed: u64,
    ) -> Result<SimConfig, ScenarioError> {
        self.scenario.sim_config(self.map.resolution(), goal, planner, perception, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u32,
    pub samples: Vec<TrackPoint>,
}

/// Observed obstacle positions in world coordinates. `now` defaults to the
/// latest sample time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracksFile {
    #[serde(default)]
    pub now: Option<f64>,
    #[serde(default)]
    pub window: Option<f64>,
    pub tracks: Vec<TrackRecord>,
}

impl TracksFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        read_json(path)
    }

    pub fn now(&self) -> f64 {
        self.now.unwrap_or_else(|| {
            self.tracks
                .iter()
                .flat_map(|t| t.samples.iter().map(|s| s.t))
                .fold(0.0, f64::max)
        })
    }

    /// Converts samples to cells. Times must increase within a track and
    /// every point must lie on the map.
    pub fn to_tracks(&self, map: &GridMap) -> Result<Vec<ObstacleTrack>, ScenarioError> {
        self.tracks
            .iter()
            .map(|rec| {
                let mut track = ObstacleTrack::new(rec.id);
                for s in &rec.samples {
                    let cell = map
                        .world_to_cell(WorldPoint::new(s.x, s.y))
                        .map_err(|_| ScenarioError::Invalid(format!("track {} leaves the map at t={}", rec.id, s.t)))?;
                    if !track.push(s.t, cell) {
                        return Err(ScenarioError::Invalid(format!("track {} times do not increase at t={}", rec.id, s.t)));
                    }
                }
                Ok(track)
            })
            .collect()
    }

    /// Latest position of each track, used as the current obstacle set.
    pub fn latest_positions(&self) -> Vec<WorldPoint> {
        self.tracks
            .iter()
            .filter_map(|t| t.samples.last().map(|s| WorldPoint::new(s.x, s.y)))
            .collect()
    }
}
