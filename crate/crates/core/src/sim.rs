//! Fixed-step episode engine: random-walk obstacles, a pure-pursuit robot,
//! perception and the replanning loop.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{ScalarField, VelocityField};
use crate::grid::{GridMap, WorldPoint};
use crate::math::{self, wrap_angle};
use crate::planner::{self, PlanResult, Planner, PlannerConfig};
use crate::regions::Discretization;
use crate::traversability::{self, ObstacleTrack, TrackWindow, TraversabilityMap, DEFAULT_TRACK_WINDOW};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Static world shared by every episode on a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub map: GridMap,
    pub discretization: Discretization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn point(&self) -> WorldPoint {
        WorldPoint::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Stationary,
    Walking,
    Turning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub v_lin: f64,
    pub v_ang: f64,
    pub radius: f64,
    /// Chance that a stationary agent turns before walking again.
    pub turn_probability: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            v_lin: 0.2,
            v_ang: 0.5,
            radius: 0.25,
            turn_probability: 0.3,
        }
    }
}

const STATIONARY_RANGE: (f64, f64) = (0.5, 3.0);
const WALKING_RANGE: (f64, f64) = (1.0, 5.0);
const TURNING_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone)]
pub struct ObstacleAgent {
    pub id: u32,
    pub pose: Pose,
    pub phase: Phase,
    pub phase_timer: f64,
    target_heading: f64,
    rng: ChaCha8Rng,
}

impl ObstacleAgent {
    /// Each agent draws from its own stream of the master seed.
    pub fn new(id: u32, pose: Pose, master_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(id as u64 + 1);
        let mut agent = Self {
            id,
            pose,
            phase: Phase::Walking,
            phase_timer: 0.0,
            target_heading: pose.heading,
            rng,
        };
        agent.enter(Phase::Walking);
        agent
    }

    fn enter(&mut self, phase: Phase) {
        let (lo, hi) = match phase {
            Phase::Stationary => STATIONARY_RANGE,
            Phase::Walking => WALKING_RANGE,
            Phase::Turning => TURNING_RANGE,
        };
        self.phase = phase;
        self.phase_timer = self.rng.random_range(lo..hi);
        if phase == Phase::Turning {
            self.target_heading = self.rng.random_range(-PI..PI);
        }
    }
}

/// Advances every agent by `dt`, in id order. Walking agents that would
/// touch a wall, another agent or the robot switch to turning instead.
pub fn step_obstacles(
    agents: &mut [ObstacleAgent],
    world: &World,
    params: &AgentParams,
    robot: Option<(WorldPoint, f64)>,
    dt: f64,
) {
    for k in 0..agents.len() {
        let mut a = agents[k].clone();
        match a.phase {
            Phase::Stationary => {
                a.phase_timer -= dt;
                if a.phase_timer <= 0.0 {
                    let turn = a.rng.random::<f64>() < params.turn_probability;
                    a.enter(if turn { Phase::Turning } else { Phase::Walking });
                }
            }
            Phase::Walking => {
                let next = WorldPoint::new(
                    a.pose.x + params.v_lin * dt * math::cos(a.pose.heading),
                    a.pose.y + params.v_lin * dt * math::sin(a.pose.heading),
                );
                let others = agents
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, o)| (o.pose.point(), params.radius));
                if agent_blocked(world, params.radius, next, others.chain(robot)) {
                    a.enter(Phase::Turning);
                } else {
                    a.pose.x = next.x;
                    a.pose.y = next.y;
                    a.phase_timer -= dt;
                    if a.phase_timer <= 0.0 {
                        a.enter(Phase::Stationary);
                    }
                }
            }
            Phase::Turning => {
                let err = wrap_angle(a.target_heading - a.pose.heading);
                let max = params.v_ang * dt;
                a.pose.heading = wrap_angle(a.pose.heading + err.clamp(-max, max));
                a.phase_timer -= dt;
                if a.phase_timer <= 0.0 || err.abs() <= max {
                    a.enter(Phase::Walking);
                }
            }
        }
        agents[k] = a;
    }
}

fn agent_blocked(
    world: &World,
    radius: f64,
    p: WorldPoint,
    mut others: impl Iterator<Item = (WorldPoint, f64)>,
) -> bool {
    let Ok(cell) = world.map.world_to_cell(p) else { return true };
    if !world.map.is_free(cell) || world
            .discretization
            .clearance
            .get(cell)
            .is_none_or(|c| c - 0.5 * world.map.resolution() < radius) {
        return true;
    }
    others.any(|(q, r)| p.distance(&q) < radius + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub v_max: f64,
    pub w_max: f64,
    pub radius: f64,
    pub lookahead: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            w_max: 1.0,
            radius: 0.2,
            lookahead: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub v: f64,
    pub w: f64,
    /// Index of the path segment the robot has progressed to.
    pub progress: usize,
}

impl RobotState {
    pub fn at(pose: Pose) -> Self {
        Self {
            pose,
            v: 0.0,
            w: 0.0,
            progress: 0,
        }
    }
}

/// Pure pursuit toward a point `lookahead` meters ahead along `path`.
/// Turns in place when the point is behind, and stops when the straight
/// segment to it crosses a cell with speed below `epsilon_f`.
pub fn follow_path(
    robot: &mut RobotState,
    path: &[WorldPoint],
    params: &RobotParams,
    map: &GridMap,
    velocity: Option<&VelocityField>,
    epsilon_f: f64,
    dt: f64,
) {
    robot.v = 0.0;
    robot.w = 0.0;
    let Some(goal) = path.last() else { return };
    let here = robot.pose.point();
    if here.distance(goal) <= 1e-9 {
        return;
    }
    let (segment, foot) = project(path, here, robot.progress);
    robot.progress = segment;
    // shorten the lookahead until the chord to it clears static walls
    let mut look = params.lookahead;
    let mut target = lookahead_point(path, segment, foot, look);
    while !chord_free(map, here, target) {
        look *= 0.5;
        if look < 0.25 * map.resolution() {
            target = path[(segment + 1).min(path.len() - 1)];
            break;
        }
        target = lookahead_point(path, segment, foot, look);
    }
    if let Some(v) = velocity {
        if segment_blocked(map, v, here, target, epsilon_f) {
            return;
        }
    }
    let alpha = wrap_angle(math::atan2(target.y - here.y, target.x - here.x) - robot.pose.heading);
    // beyond 45 degrees pure pursuit would sweep sideways; turn first
    let (v, w) = if alpha.abs() > PI / 4.0 {
        (0.0, params.w_max.copysign(alpha))
    } else {
        let dist = here.distance(&target).max(1e-9);
        let kappa = 2.0 * math::sin(alpha) / dist;
        let mut v = params.v_max.min(here.distance(goal) / dt);
        if (v * kappa).abs() > params.w_max {
            v = params.w_max / kappa.abs();
        }
        (v, (v * kappa).clamp(-params.w_max, params.w_max))
    };
    let heading = wrap_angle(robot.pose.heading + w * dt);
    let next = WorldPoint::new(here.x + v * dt * math::cos(heading), here.y + v * dt * math::sin(heading));
    let enters_blocked = |c: crate::grid::CellIndex| {
        velocity.is_some_and(|f| f.get(c) < epsilon_f) && map.world_to_cell(here).ok() != Some(c)
    };
    if v > 0.0 && !map.world_to_cell(next).is_ok_and(|c| map.is_free(c) && !enters_blocked(c)) {
        // about to clip a wall or a blocked cell: turn toward the target instead
        robot.w = (alpha / dt).clamp(-params.w_max, params.w_max);
        robot.pose.heading = wrap_angle(robot.pose.heading + robot.w * dt);
        return;
    }
    robot.v = v;
    robot.w = w;
    robot.pose = Pose::new(next.x, next.y, heading);
}

/// Closest point on the path at or after segment `from`, as (segment, point).
fn project(path: &[WorldPoint], p: WorldPoint, from: usize) -> (usize, WorldPoint) {
    if path.len() == 1 {
        return (0, path[0]);
    }
    let from = from.min(path.len() - 2);
    let mut best = (from, path[from]);
    let mut best_d = f64::INFINITY;
    // a bounded window forward keeps the robot from snapping backwards
    for s in from..(from + 64).min(path.len() - 1) {
        let (a, b) = (path[s], path[s + 1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = WorldPoint::new(a.x + t * dx, a.y + t * dy);
        let d = q.distance(&p);
        if d < best_d {
            best = (s, q);
            best_d = d;
        }
    }
    best
}

fn lookahead_point(path: &[WorldPoint], segment: usize, from: WorldPoint, lookahead: f64) -> WorldPoint {
    let mut prev = from;
    let mut left = lookahead;
    for q in &path[(segment + 1).min(path.len() - 1)..] {
        let d = prev.distance(q);
        if d >= left {
            let t = left / d;
            return WorldPoint::new(prev.x + t * (q.x - prev.x), prev.y + t * (q.y - prev.y));
        }
        left -= d;
        prev = *q;
    }
    *path.last().expect("nonempty path")
}

fn chord_free(map: &GridMap, a: WorldPoint, b: WorldPoint) -> bool {
    let n = (math::ceil(a.distance(&b) / (0.25 * map.resolution())) as usize).max(1);
    (0..=n).all(|k| {
        let t = k as f64 / n as f64;
        let p = WorldPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        map.world_to_cell(p).is_ok_and(|c| map.is_free(c))
    })
}

fn segment_blocked(map: &GridMap, velocity: &VelocityField, a: WorldPoint, b: WorldPoint, epsilon_f: f64) -> bool {
    let start = map.world_to_cell(a).ok();
    let n = (math::ceil(a.distance(&b) / (0.5 * map.resolution())) as usize).max(1);
    (1..=n).any(|k| {
        let t = k as f64 / n as f64;
        let p = WorldPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        match map.world_to_cell(p) {
            Ok(c) => Some(c) != start && velocity.get(c) < epsilon_f,
            Err(_) => true,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    /// Every agent is visible at all times.
    AllKnown,
    /// Agents within sensor range, field of view and an unobstructed ray.
    LineOfSight,
}

impl PerceptionMode {
    pub const ALL: [PerceptionMode; 2] = [PerceptionMode::AllKnown, PerceptionMode::LineOfSight];

    pub fn name(self) -> &'static str {
        match self {
            PerceptionMode::AllKnown => "all_known",
            PerceptionMode::LineOfSight => "line_of_sight",
        }
    }
}

impl core::fmt::Display for PerceptionMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown perception mode {0:?}; expected all_known or line_of_sight")]
pub struct UnknownPerception(pub alloc::string::String);

impl core::str::FromStr for PerceptionMode {
    type Err = UnknownPerception;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_known" | "A" => Ok(PerceptionMode::AllKnown),
            "line_of_sight" | "L" => Ok(PerceptionMode::LineOfSight),
            other => Err(UnknownPerception(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub mode: PerceptionMode,
    pub sensor_range: f64,
    pub fov: f64,
}

impl Perception {
    pub fn all_known() -> Self {
        Self {
            mode: PerceptionMode::AllKnown,
            sensor_range: 20.0,
            fov: 2.0 * PI,
        }
    }

    pub fn line_of_sight() -> Self {
        Self {
            mode: PerceptionMode::LineOfSight,
            ..Self::all_known()
        }
    }

    /// Whether the robot at `robot` can see a point.
    pub fn sees(&self, map: &GridMap, robot: &Pose, p: WorldPoint) -> bool {
        if self.mode == PerceptionMode::AllKnown {
            return true;
        }
        let here = robot.point();
        if here.distance(&p) > self.sensor_range {
            return false;
        }
        if self.fov < 2.0 * PI {
            let bearing = wrap_angle(math::atan2(p.y - here.y, p.x - here.x) - robot.heading);
            if bearing.abs() > self.fov / 2.0 {
                return false;
            }
        }
        map.raycast(here, p).is_ok_and(|h| h.visible)
    }
}

/// Records the cell of every visible agent at time `t` and returns the
/// visible positions.
pub fn perceive(
    perception: &Perception,
    robot: &Pose,
    agents: &[ObstacleAgent],
    map: &GridMap,
    tracks: &mut [ObstacleTrack],
    t: f64,
) -> Vec<WorldPoint> {
    let mut seen = Vec::new();
    for (a, track) in agents.iter().zip(tracks.iter_mut()) {
        let p = a.pose.point();
        if !perception.sees(map, robot, p) {
            continue;
        }
        if let Ok(c) = map.world_to_cell(p) {
            track.push(t, c);
        }
        seen.push(p);
    }
    seen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    SuccessClean,
    SuccessNonCriticalCollision,
    FailureCriticalCollision,
    /// Timed out without a critical collision.
    FailureNoCollision,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::SuccessClean | Outcome::SuccessNonCriticalCollision)
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::SuccessClean => "success_clean",
            Outcome::SuccessNonCriticalCollision => "success_noncritical",
            Outcome::FailureCriticalCollision => "failure_critical",
            Outcome::FailureNoCollision => "failure_no_collision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub traveled_distance: f64,
    pub mission_time: f64,
    pub idle_time: f64,
    /// Center distance from the robot to the nearest agent; `None` without
    /// agents.
    pub min_obstacle_distance: Option<f64>,
    pub mean_obstacle_distance: Option<f64>,
    pub outcome: Outcome,
    pub replan_count: usize,
    pub plan_time_mean_ms: f64,
    pub plan_time_max_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpawn {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub robot_start: Pose,
    pub goal: WorldPoint,
    pub agents: Vec<AgentSpawn>,
    pub seed: u64,
    pub dt: f64,
    pub replan_period: f64,
    pub perception: Perception,
    pub planner: Planner,
    pub timeout: f64,
    pub replan_enabled: bool,
    /// Obstacles move for this fraction of the obstacle-free travel time
    /// before the first plan. Not counted in mission time.
    pub preroll_fraction: f64,
    pub track_window: f64,
    pub robot: RobotParams,
    pub agent: AgentParams,
    pub planner_cfg: PlannerConfig,
    pub record_trace: bool,
    /// Keep wall-clock plan times in metrics and trace. Off by default so
    /// that reruns are byte-identical.
    pub record_timing: bool,
}

impl SimConfig {
    /// Defaults for a map of the given resolution. The planner's obstacle
    /// disc covers robot plus agent so planned paths keep them apart.
    pub fn new(robot_start: Pose, goal: WorldPoint, resolution: f64) -> Self {
        let robot = RobotParams::default();
        let agent = AgentParams::default();
        let mut planner_cfg = PlannerConfig::for_resolution(resolution);
        planner_cfg.dyn_obstacle_radius = robot.radius + agent.radius;
        Self {
            robot_start,
            goal,
            agents: Vec::new(),
            seed: 0,
            dt: 0.05,
            replan_period: 0.1,
            perception: Perception::all_known(),
            planner: Planner::TrFmm,
            timeout: 300.0,
            replan_enabled: true,
            preroll_fraction: 0.0,
            track_window: DEFAULT_TRACK_WINDOW,
            robot,
            agent,
            planner_cfg,
            record_trace: false,
            record_timing: false,
        }
    }

    pub fn validate(&self, world: &World) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig("dt must be positive"));
        }
        if !(self.replan_period >= self.dt) {
            return Err(SimError::InvalidConfig("replan_period must be at least dt"));
        }
        if !(self.timeout > 0.0) {
            return Err(SimError::InvalidConfig("timeout must be positive"));
        }
        if !(self.perception.sensor_range > 0.0) {
            return Err(SimError::InvalidConfig("sensor range must be positive"));
        }
        if !(self.track_window > 0.0) {
            return Err(SimError::InvalidConfig("track window must be positive"));
        }
        if !(0.0..=1.0).contains(&self.preroll_fraction) {
            return Err(SimError::InvalidConfig("preroll_fraction must be in [0, 1]"));
        }
        let step = self.robot.v_max.max(self.agent.v_lin) * self.dt;
        if step > 0.5 * self.agent.radius.min(self.robot.radius) {
            return Err(SimError::InvalidConfig("per-step displacement exceeds half a radius"));
        }
        let free = |p: WorldPoint| world.map.world_to_cell(p).is_ok_and(|c| world.map.is_free(c));
        if !free(self.robot_start.point()) {
            return Err(SimError::InvalidConfig("robot start is not free"));
        }
        if !free(self.goal) {
            return Err(SimError::InvalidConfig("goal is not free"));
        }
        if self.agents.iter().any(|a| !free(WorldPoint::new(a.x, a.y))) {
            return Err(SimError::InvalidConfig("agent spawn is not free"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Tick {
        t: f64,
        robot: Pose,
        agents: Vec<Pose>,
    },
    Replan {
        t: f64,
        path: Vec<WorldPoint>,
        /// Sequence number of the traversability snapshot, if one was built.
        tr_snapshot: Option<u64>,
        plan_time_ms: f64,
    },
    PlanFailed {
        t: f64,
        reason: alloc::string::String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEvent>,
}

/// Mutable episode state. Exposed so interactive front ends can drive the
/// loop one tick at a time.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub agents: Vec<ObstacleAgent>,
    pub robot: RobotState,
    pub tracks: Vec<ObstacleTrack>,
    pub perceived: Vec<WorldPoint>,
    pub path: Vec<WorldPoint>,
    pub velocity: Option<VelocityField>,
    pub tr_map: Option<TraversabilityMap>,
    /// Arrival field of the latest successful plan.
    pub arrival: Option<ScalarField>,
    pub tick: u64,
    tr_seq: u64,
    /// Goal of the current path if it was planned with nothing observed.
    quiet_plan_goal: Option<WorldPoint>,
}

impl EpisodeState {
    pub fn new(cfg: &SimConfig) -> Self {
        let agents: Vec<ObstacleAgent> = cfg
            .agents
            .iter()
            .enumerate()
            .map(|(i, s)| ObstacleAgent::new(i as u32, Pose::new(s.x, s.y, s.heading), cfg.seed))
            .collect();
        let tracks = (0..agents.len() as u32).map(ObstacleTrack::new).collect();
        Self {
            agents,
            robot: RobotState::at(cfg.robot_start),
            tracks,
            perceived: Vec::new(),
            path: Vec::new(),
            velocity: None,
            tr_map: None,
            arrival: None,
            tick: 0,
            tr_seq: 0,
            quiet_plan_goal: None,
        }
    }

    pub fn time(&self, cfg: &SimConfig) -> f64 {
        self.tick as f64 * cfg.dt
    }

    /// Moves agents and perceives them.
    pub fn advance_world(&mut self, world: &World, cfg: &SimConfig) {
        let robot = Some((self.robot.pose.point(), cfg.robot.radius));
        step_obstacles(&mut self.agents, world, &cfg.agent, robot, cfg.dt);
        self.tick += 1;
        let t = self.time(cfg);
        self.perceived = perceive(&cfg.perception, &self.robot.pose, &self.agents, &world.map, &mut self.tracks, t);
        for track in &mut self.tracks {
            track.forget_before(t - cfg.track_window);
        }
    }

    /// Nothing perceived now and no track history in the window.
    fn quiet(&self) -> bool {
        self.perceived.is_empty() && self.tracks.iter().all(|t| t.samples().is_empty())
    }

    /// Rebuilds the velocity map from the perceived agents and, when `plan`
    /// is set, replans. Returns the plan outcome. A path planned with
    /// nothing observed stays optimal while that remains so, and is kept.
    pub fn refresh(&mut self, world: &World, cfg: &SimConfig, plan: bool) -> Option<Result<PlanResult, planner::PlanError>> {
        let clearance = &world.discretization.clearance;
        let velocity = planner::build_velocity_map(&world.map, clearance, &self.perceived, &cfg.planner_cfg);
        let quiet = self.quiet();
        let unchanged = quiet && self.quiet_plan_goal == Some(cfg.goal) && !self.path.is_empty();
        let result = (plan && !unchanged).then(|| self.plan_on(world, cfg, &velocity));
        self.velocity = Some(velocity);
        if let Some(Ok(r)) = &result {
            self.path = r.path.clone();
            self.arrival = Some(r.arrival.clone());
            self.robot.progress = 0;
            self.quiet_plan_goal = quiet.then_some(cfg.goal);
        }
        result
    }

    fn plan_on(
        &mut self,
        world: &World,
        cfg: &SimConfig,
        velocity: &VelocityField,
    ) -> Result<PlanResult, planner::PlanError> {
        let robot = self.robot.pose.point();
        match cfg.planner {
            Planner::Fmm => planner::plan_fmm(&world.map, velocity, robot, cfg.goal, &cfg.planner_cfg),
            Planner::TrFmm => {
                let d = &world.discretization;
                let region = |p: WorldPoint| world.map.world_to_cell(p).ok().and_then(|c| d.regions.region_of(c));
                let (Some(rr), Some(gr)) = (region(robot), region(cfg.goal)) else {
                    return Err(planner::PlanError::NoPath);
                };
                let window = TrackWindow {
                    window: cfg.track_window,
                    now: self.time(cfg),
                };
                let tr = traversability::build_traversability_map(
                    &d.regions,
                    &d.graph,
                    &self.tracks,
                    window,
                    rr,
                    gr,
                    &d.clearance,
                )
                .map_err(|_| planner::PlanError::NoPath)?;
                self.tr_seq += 1;
                let r = planner::plan(&world.map, &d.regions, velocity, &tr, robot, cfg.goal, &cfg.planner_cfg);
                self.tr_map = Some(tr);
                r
            }
        }
    }

    pub fn tr_snapshot(&self) -> Option<u64> {
        self.tr_map.as_ref().map(|_| self.tr_seq)
    }
}

/// Length of the plain-FMM path with no agents, meters.
pub fn obstacle_free_path_length(world: &World, cfg: &SimConfig) -> Option<f64> {
    let velocity = planner::build_velocity_map(&world.map, &world.discretization.clearance, &[], &cfg.planner_cfg);
    let r = planner::plan_fmm(&world.map, &velocity, cfg.robot_start.point(), cfg.goal, &cfg.planner_cfg).ok()?;
    Some(r.path.windows(2).map(|w| w[0].distance(&w[1])).sum())
}

/// Running totals behind [`RunMetrics`].
#[derive(Debug, Clone, Default)]
pub struct MetricsTracker {
    steps: u64,
    traveled: f64,
    idle_steps: u64,
    nearest_sum: f64,
    nearest_min: Option<f64>,
    nearest_count: u64,
    plan_times: Vec<f64>,
    contact_any: bool,
    moving_contact: f64,
}

impl MetricsTracker {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn plan_count(&self) -> usize {
        self.plan_times.len()
    }

    pub fn record_plan(&mut self, ms: f64) {
        self.plan_times.push(ms);
    }

    /// Accounts one robot step. Returns true once moving contact has lasted
    /// longer than half a second.
    pub fn observe(&mut self, cfg: &SimConfig, before: WorldPoint, robot: &RobotState, agents: &[ObstacleAgent]) -> bool {
        let after = robot.pose.point();
        self.traveled += before.distance(&after);
        if robot.v == 0.0 {
            self.idle_steps += 1;
        }
        self.steps += 1;
        let nearest = agents
            .iter()
            .map(|a| a.pose.point().distance(&after))
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        if let Some(d) = nearest {
            self.nearest_sum += d;
            self.nearest_count += 1;
            self.nearest_min = Some(self.nearest_min.map_or(d, |m| m.min(d)));
            if d < cfg.robot.radius + cfg.agent.radius {
                self.contact_any = true;
                self.moving_contact = if robot.v > 0.05 { self.moving_contact + cfg.dt } else { 0.0 };
            } else {
                self.moving_contact = 0.0;
            }
        }
        self.moving_contact > 0.5
    }

    pub fn had_contact(&self) -> bool {
        self.contact_any
    }

    pub fn to_metrics(&self, dt: f64, outcome: Outcome) -> RunMetrics {
        let n = self.plan_times.len();
        RunMetrics {
            traveled_distance: self.traveled,
            mission_time: self.steps as f64 * dt,
            idle_time: self.idle_steps as f64 * dt,
            min_obstacle_distance: self.nearest_min,
            mean_obstacle_distance: (self.nearest_count > 0).then(|| self.nearest_sum / self.nearest_count as f64),
            outcome,
            replan_count: n,
            plan_time_mean_ms: if n == 0 { 0.0 } else { self.plan_times.iter().sum::<f64>() / n as f64 },
            plan_time_max_ms: self.plan_times.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// Steps one episode a tick at a time.
#[derive(Debug, Clone)]
pub struct EpisodeRunner {
    pub state: EpisodeState,
    pub metrics: MetricsTracker,
    pub trace: Vec<TraceEvent>,
    planned_once: bool,
    outcome: Option<Outcome>,
}

impl EpisodeRunner {
    /// Validates the config and runs the obstacle pre-roll, if any.
    pub fn new(world: &World, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate(world)?;
        let mut st = EpisodeState::new(cfg);
        if cfg.preroll_fraction > 0.0 && !st.agents.is_empty() {
            let free_time = obstacle_free_path_length(world, cfg).unwrap_or(0.0) / cfg.robot.v_max;
            let ticks = math::round(cfg.preroll_fraction * free_time / cfg.dt) as u64;
            for _ in 0..ticks {
                st.advance_world(world, cfg);
            }
        } else {
            let t = st.time(cfg);
            st.perceived = perceive(&cfg.perception, &st.robot.pose, &st.agents, &world.map, &mut st.tracks, t);
        }
        Ok(Self {
            state: st,
            metrics: MetricsTracker::default(),
            trace: Vec::new(),
            planned_once: false,
            outcome: None,
        })
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    /// Clears a finished outcome so the robot heads for a new goal. The next
    /// replan boundary plans even when replanning is off.
    pub fn resume(&mut self) {
        self.outcome = None;
        self.planned_once = false;
    }

    /// One simulation tick. Returns the outcome once the episode has ended.
    pub fn step(&mut self, world: &World, cfg: &SimConfig) -> Option<Outcome> {
        if self.outcome.is_some() {
            return self.outcome;
        }
        let st = &mut self.state;
        if st.robot.pose.point().distance(&cfg.goal) <= cfg.robot.radius {
            self.outcome = Some(if self.metrics.had_contact() {
                Outcome::SuccessNonCriticalCollision
            } else {
                Outcome::SuccessClean
            });
            return self.outcome;
        }
        let steps = self.metrics.steps();
        if steps >= math::ceil(cfg.timeout / cfg.dt) as u64 {
            self.outcome = Some(Outcome::FailureNoCollision);
            return self.outcome;
        }
        if steps > 0 {
            st.advance_world(world, cfg);
        }
        let t = st.time(cfg);
        let replan_every = (math::round(cfg.replan_period / cfg.dt) as u64).max(1);
        if steps % replan_every == 0 {
            let want_plan = cfg.replan_enabled || !self.planned_once;
            match st.refresh(world, cfg, want_plan) {
                Some(Ok(mut r)) => {
                    self.planned_once = true;
                    if !cfg.record_timing {
                        r.plan_time_ms = 0.0;
                    }
                    self.metrics.record_plan(r.plan_time_ms);
                    if cfg.record_trace {
                        self.trace.push(TraceEvent::Replan {
                            t,
                            path: r.path,
                            tr_snapshot: st.tr_snapshot(),
                            plan_time_ms: r.plan_time_ms,
                        });
                    }
                }
                Some(Err(e)) => {
                    if cfg.record_trace {
                        self.trace.push(TraceEvent::PlanFailed {
                            t,
                            reason: alloc::format!("{e}"),
                        });
                    }
                }
                None => {}
            }
        }

        let before = st.robot.pose.point();
        follow_path(
            &mut st.robot,
            &st.path,
            &cfg.robot,
            &world.map,
            st.velocity.as_ref(),
            cfg.planner_cfg.epsilon_f,
            cfg.dt,
        );
        let critical = self.metrics.observe(cfg, before, &st.robot, &st.agents);
        if cfg.record_trace {
            self.trace.push(TraceEvent::Tick {
                t,
                robot: st.robot.pose,
                agents: st.agents.iter().map(|a| a.pose).collect(),
            });
        }
        if critical {
            self.outcome = Some(Outcome::FailureCriticalCollision);
        }
        self.outcome
    }

    pub fn finish(self, cfg: &SimConfig) -> Episode {
        let outcome = self.outcome.unwrap_or(Outcome::FailureNoCollision);
        Episode {
            metrics: self.metrics.to_metrics(cfg.dt, outcome),
            trace: self.trace,
        }
    }
}

/// Runs one episode to goal, critical collision or timeout.
pub fn run_episode(world: &World, cfg: &SimConfig) -> Result<Episode, SimError> {
    let mut runner = EpisodeRunner::new(world, cfg)?;
    while runner.step(world, cfg).is_none() {}
    Ok(runner.finish(cfg))
}
