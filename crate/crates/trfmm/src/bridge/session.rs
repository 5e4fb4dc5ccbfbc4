//! Interactive episode state. Ticks and commands go through one owner in
//! one order, so a command log replays the session exactly.

use serde::{Deserialize, Serialize};
use trfmm_core::sim::{ObstacleAgent, TraceEvent};
use trfmm_core::traversability::ObstacleTrack;
use trfmm_core::{Cell, EpisodeRunner, Pose, SimConfig, SimError, World, WorldPoint};

use super::protocol::{AgentPose, Command, FullState, MapInfo, ProgressMetrics, Raster, RasterId, Snapshot};
use crate::artifact::RegionArtifact;
use crate::io::map_digest;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("unknown obstacle {0}")]
    UnknownObstacle(u32),
    #[error(transparent)]
    Config(#[from] SimError),
    #[error("raster {0:?} is not available yet")]
    RasterUnavailable(RasterId),
    #[error("replay stalled at tick {0}: session paused")]
    ReplayStalled(u64),
}

/// An accepted command and the number of advancing ticks before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub command: Command,
}

#[derive(Debug, Clone)]
pub struct Session {
    world: World,
    /// Config the session was created with.
    initial: SimConfig,
    /// Config of the running episode.
    cfg: SimConfig,
    runner: EpisodeRunner,
    paused: bool,
    ticks: u64,
    log: Vec<LogEntry>,
    next_agent_id: u32,
    plan_tick: Option<u64>,
    last_replans: usize,
}

impl Session {
    /// Starts paused at tick 0. Interactive episodes never time out.
    pub fn new(world: World, mut cfg: SimConfig) -> Result<Self, SessionError> {
        let initial = cfg.clone();
        cfg.timeout = f64::INFINITY;
        let runner = EpisodeRunner::new(&world, &cfg)?;
        let next_agent_id = cfg.agents.len() as u32;
        Ok(Self {
            world,
            initial,
            cfg,
            runner,
            paused: true,
            ticks: 0,
            log: Vec::new(),
            next_agent_id,
            plan_tick: None,
            last_replans: 0,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn initial_config(&self) -> &SimConfig {
        &self.initial
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.cfg.dt
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.runner.trace
    }

    pub fn agents(&self) -> &[ObstacleAgent] {
        &self.runner.state.agents
    }

    /// Advances one step unless paused. Returns whether time moved.
    pub fn tick(&mut self) -> bool {
        if self.paused {
            return false;
        }
        if self.runner.outcome().is_some() {
            // Mission over: the world keeps moving, the robot waits.
            let st = &mut self.runner.state;
            st.advance_world(&self.world, &self.cfg);
            st.refresh(&self.world, &self.cfg, false);
        } else {
            self.runner.step(&self.world, &self.cfg);
        }
        self.ticks += 1;
        let replans = self.runner.metrics.plan_count();
        if replans != self.last_replans {
            self.last_replans = replans;
            self.plan_tick = Some(self.ticks);
        }
        true
    }

    fn check_point(&self, x: f64, y: f64) -> Result<WorldPoint, SessionError> {
        let p = WorldPoint::new(x, y);
        if !p.is_finite() {
            return Err(SessionError::InvalidTarget("coordinates must be finite".into()));
        }
        let map = &self.world.map;
        let c = map
            .world_to_cell(p)
            .map_err(|_| SessionError::InvalidTarget(format!("({x}, {y}) is outside the map")))?;
        if map.cell_at(c.col as isize, c.row as isize) != Cell::Free {
            return Err(SessionError::InvalidTarget(format!("({x}, {y}) is occupied")));
        }
        Ok(p)
    }

    /// Whether `p` lies in a region the robot's region connects to.
    fn connected_to_robot(&self, p: WorldPoint) -> bool {
        let d = &self.world.discretization;
        let region = |q: WorldPoint| self.world.map.world_to_cell(q).ok().and_then(|c| d.regions.region_of(c));
        let (Some(from), Some(to)) = (region(self.runner.state.robot.pose.point()), region(p)) else {
            return false;
        };
        let mut seen = vec![false; d.regions.len()];
        let mut stack = vec![from];
        seen[from as usize] = true;
        while let Some(r) = stack.pop() {
            if r == to {
                return true;
            }
            for &(n, _) in d.graph.neighbors(r) {
                if !std::mem::replace(&mut seen[n as usize], true) {
                    stack.push(n);
                }
            }
        }
        false
    }

    fn restart(&mut self, cfg: SimConfig) -> Result<(), SessionError> {
        let runner = EpisodeRunner::new(&self.world, &cfg)?;
        self.next_agent_id = cfg.agents.len() as u32;
        self.cfg = cfg;
        self.runner = runner;
        self.plan_tick = None;
        self.last_replans = 0;
        Ok(())
    }

    /// Validates and applies a command. Rejected commands leave the state
    /// untouched and are not logged.
    pub fn apply_command(&mut self, cmd: Command) -> Result<(), SessionError> {
        match &cmd {
            Command::SetGoal { x, y } => {
                let p = self.check_point(*x, *y)?;
                if !self.connected_to_robot(p) {
                    return Err(SessionError::InvalidTarget(format!("({x}, {y}) is not reachable free space")));
                }
                // Re-sending the current goal must not disturb the run.
                if p != self.cfg.goal {
                    self.cfg.goal = p;
                    self.runner.resume();
                }
            }
            Command::SpawnObstacle { x, y, heading } => {
                let p = self.check_point(*x, *y)?;
                if !heading.is_finite() {
                    return Err(SessionError::InvalidTarget("heading must be finite".into()));
                }
                let id = self.next_agent_id;
                let st = &mut self.runner.state;
                st.agents.push(ObstacleAgent::new(id, Pose::new(p.x, p.y, *heading), self.cfg.seed));
                st.tracks.push(ObstacleTrack::new(id));
                self.next_agent_id += 1;
            }
            Command::RemoveObstacle { id } => {
                let st = &mut self.runner.state;
                let k = st.agents.iter().position(|a| a.id == *id).ok_or(SessionError::UnknownObstacle(*id))?;
                st.agents.remove(k);
                st.tracks.remove(k);
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::SetPerception { mode } => self.cfg.perception.mode = *mode,
            Command::SetSeed { seed } => {
                let mut cfg = self.cfg.clone();
                cfg.seed = *seed;
                self.restart(cfg)?;
            }
            Command::Reset { scenario } => {
                // Without a scenario, back to the session's original setup.
                let mut cfg = self.cfg.clone();
                let (start, goal, agents) = match scenario {
                    Some(s) => (s.robot_start, s.goal, s.agents.clone()),
                    None => (self.initial.robot_start, self.initial.goal, self.initial.agents.clone()),
                };
                cfg.robot_start = start;
                cfg.goal = goal;
                cfg.agents = agents;
                self.restart(cfg)?;
            }
        }
        self.log.push(LogEntry {
            tick: self.ticks,
            command: cmd,
        });
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let st = &self.runner.state;
        let outcome = self.runner.outcome();
        let metrics = self.runner.metrics.to_metrics(self.cfg.dt, outcome.unwrap_or(trfmm_core::Outcome::SuccessClean));
        let mut rasters = vec![RasterId::Clearance];
        if st.arrival.is_some() {
            rasters.push(RasterId::Arrival);
        }
        if st.velocity.is_some() {
            rasters.push(RasterId::Velocity);
        }
        if st.tr_map.is_some() {
            rasters.push(RasterId::Traversability);
        }
        Snapshot {
            tick: self.ticks,
            time: self.time(),
            paused: self.paused,
            perception: self.cfg.perception.mode,
            seed: self.cfg.seed,
            goal: self.cfg.goal,
            robot: st.robot.pose,
            agents: st
                .agents
                .iter()
                .map(|a| AgentPose {
                    id: a.id,
                    x: a.pose.x,
                    y: a.pose.y,
                    heading: a.pose.heading,
                })
                .collect(),
            path: st.path.clone(),
            plan_tick: self.plan_tick,
            region_tr: st.tr_map.as_ref().map(|t| t.regions.iter().map(|r| r.value).collect()),
            rasters,
            metrics: ProgressMetrics::new(&metrics, outcome),
        }
    }

    pub fn map_info(&self) -> MapInfo {
        let map = &self.world.map;
        let mut occupancy: Vec<(bool, usize)> = Vec::new();
        for c in map.cells() {
            let occ = *c == Cell::Occupied;
            match occupancy.last_mut() {
                Some((o, n)) if *o == occ => *n += 1,
                _ => occupancy.push((occ, 1)),
            }
        }
        MapInfo {
            width: map.width(),
            height: map.height(),
            resolution: map.resolution(),
            origin: map.origin(),
            digest: map_digest(map),
            occupancy,
        }
    }

    pub fn full_state(&self) -> FullState {
        FullState {
            map: self.map_info(),
            regions: RegionArtifact::new(&self.world.map, &self.world.discretization),
            snapshot: self.snapshot(),
        }
    }

    pub fn raster(&self, id: RasterId) -> Result<Raster, SessionError> {
        let st = &self.runner.state;
        let values: Vec<Option<f64>> = match id {
            RasterId::Clearance => self.world.discretization.clearance.to_options(),
            RasterId::Arrival => st.arrival.as_ref().ok_or(SessionError::RasterUnavailable(id))?.to_options(),
            RasterId::Velocity => {
                st.velocity.as_ref().ok_or(SessionError::RasterUnavailable(id))?.speeds().iter().map(|v| Some(*v)).collect()
            }
            RasterId::Traversability => {
                st.tr_map.as_ref().ok_or(SessionError::RasterUnavailable(id))?.raster().iter().map(|v| Some(*v)).collect()
            }
        };
        Ok(Raster {
            id,
            tick: self.ticks,
            width: self.world.map.width(),
            height: self.world.map.height(),
            values,
        })
    }

    /// Rebuilds a session headlessly from its starting config and command
    /// log, then runs it to `ticks`.
    pub fn replay(world: World, cfg: SimConfig, log: &[LogEntry], ticks: u64) -> Result<Session, SessionError> {
        let mut s = Session::new(world, cfg)?;
        for entry in log {
            s.run_until(entry.tick)?;
            s.apply_command(entry.command.clone())?;
        }
        s.run_until(ticks)?;
        Ok(s)
    }

    fn run_until(&mut self, tick: u64) -> Result<(), SessionError> {
        while self.ticks < tick {
            if !self.tick() {
                return Err(SessionError::ReplayStalled(self.ticks));
            }
        }
        Ok(())
    }
}
