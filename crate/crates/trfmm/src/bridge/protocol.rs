//! Wire messages. Every message travels in an envelope
//! `{"type": ..., "seq": ..., "payload": {...}}`; `seq` counts messages per
//! sender and connection.

use serde::{Deserialize, Serialize};
use trfmm_core::sim::AgentSpawn;
use trfmm_core::{Outcome, PerceptionMode, Pose, RunMetrics, WorldPoint};

use crate::artifact::RegionArtifact;

/// Operator commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "WireCommand")]
pub enum Command {
    SetGoal {
        x: f64,
        y: f64,
    },
    SpawnObstacle {
        x: f64,
        y: f64,
        #[serde(default)]
        heading: f64,
    },
    RemoveObstacle {
        id: u32,
    },
    Pause,
    Resume,
    SetPerception {
        mode: PerceptionMode,
    },
    /// Restarts the episode with a new master seed.
    SetSeed {
        seed: u64,
    },
    /// Restarts the episode, optionally with a new start, goal and agents on
    /// the same map.
    Reset {
        #[serde(default)]
        scenario: Option<ResetScenario>,
    },
}

// Serde ignores extra fields on unit variants of internally tagged enums,
// so parsing goes through empty struct variants instead.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum WireCommand {
    SetGoal {
        x: f64,
        y: f64,
    },
    SpawnObstacle {
        x: f64,
        y: f64,
        #[serde(default)]
        heading: f64,
    },
    RemoveObstacle {
        id: u32,
    },
    Pause {},
    Resume {},
    SetPerception {
        mode: PerceptionMode,
    },
    SetSeed {
        seed: u64,
    },
    Reset {
        #[serde(default)]
        scenario: Option<ResetScenario>,
    },
}

impl From<WireCommand> for Command {
    fn from(w: WireCommand) -> Self {
        match w {
            WireCommand::SetGoal { x, y } => Command::SetGoal { x, y },
            WireCommand::SpawnObstacle { x, y, heading } => Command::SpawnObstacle { x, y, heading },
            WireCommand::RemoveObstacle { id } => Command::RemoveObstacle { id },
            WireCommand::Pause {} => Command::Pause,
            WireCommand::Resume {} => Command::Resume,
            WireCommand::SetPerception { mode } => Command::SetPerception { mode },
            WireCommand::SetSeed { seed } => Command::SetSeed { seed },
            WireCommand::Reset { scenario } => Command::Reset { scenario },
        }
    }
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::SetGoal { .. } => "set_goal",
            Command::SpawnObstacle { .. } => "spawn_obstacle",
            Command::RemoveObstacle { .. } => "remove_obstacle",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::SetPerception { .. } => "set_perception",
            Command::SetSeed { .. } => "set_seed",
            Command::Reset { .. } => "reset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetScenario {
    pub robot_start: Pose,
    pub goal: WorldPoint,
    #[serde(default)]
    pub agents: Vec<AgentSpawn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterId {
    /// Arrival field of the latest plan.
    Arrival,
    /// Speed map the latest plan ran on.
    Velocity,
    /// Per-cell traversability of the latest plan.
    Traversability,
    /// Distance to static obstacles.
    Clearance,
}

impl RasterId {
    pub const ALL: [RasterId; 4] = [RasterId::Arrival, RasterId::Velocity, RasterId::Traversability, RasterId::Clearance];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientBody {
    Command(Command),
    GetRaster { id: RasterId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Metrics of the episode so far; `outcome` is set once it has ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressMetrics {
    pub traveled_distance: f64,
    pub mission_time: f64,
    pub idle_time: f64,
    pub min_obstacle_distance: Option<f64>,
    pub mean_obstacle_distance: Option<f64>,
    pub replan_count: usize,
    pub outcome: Option<Outcome>,
}

impl ProgressMetrics {
    pub fn new(m: &RunMetrics, outcome: Option<Outcome>) -> Self {
        Self {
            traveled_distance: m.traveled_distance,
            mission_time: m.mission_time,
            idle_time: m.idle_time,
            min_obstacle_distance: m.min_obstacle_distance,
            mean_obstacle_distance: m.mean_obstacle_distance,
            replan_count: m.replan_count,
            outcome,
        }
    }
}

/// Dynamic state at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub time: f64,
    pub paused: bool,
    pub perception: PerceptionMode,
    pub seed: u64,
    pub goal: WorldPoint,
    pub robot: Pose,
    pub agents: Vec<AgentPose>,
    pub path: Vec<WorldPoint>,
    /// Tick of the plan `path` came from.
    pub plan_tick: Option<u64>,
    /// Traversability per region id, from the latest plan.
    pub region_tr: Option<Vec<f64>>,
    /// Rasters currently available through `get_raster`.
    pub rasters: Vec<RasterId>,
    pub metrics: ProgressMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: WorldPoint,
    pub digest: String,
    /// `[occupied, run]` pairs, row-major, row 0 first.
    pub occupancy: Vec<(bool, usize)>,
}

/// Handshake: static artifacts plus the current snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub map: MapInfo,
    pub regions: RegionArtifact,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub command_seq: u64,
    pub kind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidTarget,
    UnknownObstacle,
    BadMessage,
    InvalidConfig,
    RasterUnavailable,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub command_seq: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

/// Row-major values, row 0 first; `null` marks unreached cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub id: RasterId,
    pub tick: u64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    FullState(Box<FullState>),
    Snapshot(Box<Snapshot>),
    Ack(Ack),
    Error(ErrorBody),
    Raster(Raster),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("non-finite value at {0}")]
pub struct NonFinite(pub String);

/// Refuses NaN and infinities, which JSON cannot carry.
pub trait CheckFinite {
    fn check_finite(&self) -> Result<(), NonFinite>;
}

fn fin(v: f64, at: &str) -> Result<(), NonFinite> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NonFinite(at.into()))
    }
}

fn fin_point(p: &WorldPoint, at: &str) -> Result<(), NonFinite> {
    fin(p.x, at)?;
    fin(p.y, at)
}

fn fin_pose(p: &Pose, at: &str) -> Result<(), NonFinite> {
    fin(p.x, at)?;
    fin(p.y, at)?;
    fin(p.heading, at)
}

impl CheckFinite for Snapshot {
    fn check_finite(&self) -> Result<(), NonFinite> {
        fin(self.time, "snapshot.time")?;
        fin_point(&self.goal, "snapshot.goal")?;
        fin_pose(&self.robot, "snapshot.robot")?;
        for a in &self.agents {
            fin(a.x, "snapshot.agents")?;
            fin(a.y, "snapshot.agents")?;
            fin(a.heading, "snapshot.agents")?;
        }
        for p in &self.path {
            fin_point(p, "snapshot.path")?;
        }
        for v in self.region_tr.iter().flatten() {
            fin(*v, "snapshot.region_tr")?;
        }
        let m = &self.metrics;
        fin(m.traveled_distance, "metrics.traveled_distance")?;
        fin(m.mission_time, "metrics.mission_time")?;
        fin(m.idle_time, "metrics.idle_time")?;
        for v in [m.min_obstacle_distance, m.mean_obstacle_distance].into_iter().flatten() {
            fin(v, "metrics.obstacle_distance")?;
        }
        Ok(())
    }
}

impl CheckFinite for FullState {
    fn check_finite(&self) -> Result<(), NonFinite> {
        fin(self.map.resolution, "map.resolution")?;
        fin_point(&self.map.origin, "map.origin")?;
        for r in &self.regions.regions {
            fin(r.clearance, "regions.clearance")?;
        }
        for e in &self.regions.edges {
            fin(e.length, "regions.edges")?;
        }
        self.snapshot.check_finite()
    }
}

impl CheckFinite for Raster {
    fn check_finite(&self) -> Result<(), NonFinite> {
        self.values.iter().flatten().try_for_each(|v| fin(*v, "raster.values"))
    }
}

impl CheckFinite for ServerBody {
    fn check_finite(&self) -> Result<(), NonFinite> {
        match self {
            ServerBody::FullState(s) => s.check_finite(),
            ServerBody::Snapshot(s) => s.check_finite(),
            ServerBody::Raster(r) => r.check_finite(),
            ServerBody::Ack(_) | ServerBody::Error(_) => Ok(()),
        }
    }
}

impl ServerMessage {
    /// JSON text, after the finite check.
    pub fn encode(&self) -> Result<String, NonFinite> {
        self.body.check_finite()?;
        Ok(serde_json::to_string(self).expect("server messages serialize"))
    }
}

impl ClientMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}
