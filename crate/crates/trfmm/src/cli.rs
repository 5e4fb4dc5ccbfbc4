//! Command-line front end. Exit codes: 0 success, 2 bad input, 3 failure
//! while running.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trfmm_core::planner::{self, build_velocity_map};
use trfmm_core::traversability::{build_traversability_map, TrackWindow, DEFAULT_TRACK_WINDOW};
use trfmm_core::{regions, DiscretizeConfig, GridMap, PerceptionMode, Planner, WorldPoint};

use crate::artifact::RegionArtifact;
use crate::bridge::{serve, ServeOptions, Session};
use crate::harness::{compare_replanning, run_experiments, ExperimentSpec, HarnessError};
use crate::io::{field_to_bytes, field_to_csv, load_map};
use crate::scenario::{read_json, Scenario, TracksFile};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            config(e)
        } else {
            runtime(e)
        }
    }
}

fn parse_point(s: &str) -> Result<WorldPoint, String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let x: f64 = x.trim().parse().map_err(|_| format!("bad x {x:?}"))?;
    let y: f64 = y.trim().parse().map_err(|_| format!("bad y {y:?}"))?;
    let p = WorldPoint::new(x, y);
    if p.is_finite() {
        Ok(p)
    } else {
        Err("coordinates must be finite".into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "trfmm", version, about = "Traversability-aware Fast Marching planning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Plans one path on a map from observed obstacle tracks.
    Plan(PlanArgs),
    /// Runs one simulated episode of a scenario.
    Simulate(SimulateArgs),
    /// Runs a seeded experiment sweep from a spec file.
    Sweep(SweepArgs),
    /// Partitions a map into regions and writes the artifact.
    Discretize(DiscretizeArgs),
    /// Serves one interactive episode over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Meters per cell, required for PGM maps.
    #[arg(long)]
    pub resolution: Option<f64>,
}

impl MapArgs {
    fn load(&self) -> Result<GridMap, CliError> {
        load_map(&self.map, self.resolution, WorldPoint::default()).map_err(config)
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[arg(long, value_parser = parse_point)]
    pub robot: WorldPoint,
    #[arg(long, value_parser = parse_point)]
    pub goal: WorldPoint,
    /// Obstacle tracks JSON; latest samples are the current obstacles.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Region artifact from `discretize`, reused instead of recomputing.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long, default_value = "trfmm")]
    pub planner: String,
    /// Path JSON destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Index into the scenario's goal list.
    #[arg(long, default_value_t = 0)]
    pub goal: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "trfmm")]
    pub planner: String,
    #[arg(long, default_value = "all_known")]
    pub perception: String,
    /// Plan once at the start instead of every replan period.
    #[arg(long)]
    pub no_replan: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Also write the event trace as JSON lines next to the metrics.
    #[arg(long)]
    pub trace: bool,
    /// Metrics JSON destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment spec JSON.
    pub spec: PathBuf,
    /// Overrides the spec's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the spec's seed list with 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Pair every seed with a planning-once run instead.
    #[arg(long)]
    pub compare_replanning: bool,
}

#[derive(Debug, Args)]
pub struct DiscretizeArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[arg(long)]
    pub seed_min_clearance: Option<f64>,
    #[arg(long)]
    pub max_region_area: Option<usize>,
    /// Also dump the clearance field; `.csv` for text, anything else binary.
    #[arg(long)]
    pub clearance: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    /// Simulated seconds per wall second; 0 for as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub pace: f64,
    #[arg(long, default_value_t = 100)]
    pub broadcast_ms: u64,
    /// Appends accepted commands here for later replay.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            }
            fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct PlanOutput {
    planner: Planner,
    path: Vec<WorldPoint>,
    length: f64,
    plan_time_ms: f64,
    region_tr: Option<Vec<f64>>,
}

fn cmd_plan(a: &PlanArgs) -> Result<(), CliError> {
    let map = a.map.load()?;
    let which: Planner = a.planner.parse().map_err(config)?;
    let tracks_file = match &a.tracks {
        Some(p) => TracksFile::load(p).map_err(config)?,
        None => TracksFile::default(),
    };
    let tracks = tracks_file.to_tracks(&map).map_err(config)?;
    let d = match &a.regions {
        Some(p) => {
            let art: RegionArtifact = read_json(p).map_err(config)?;
            art.restore(&map).map_err(config)?
        }
        None => regions::discretize(&map, &DiscretizeConfig::for_resolution(map.resolution())).map_err(config)?,
    };
    let mut cfg = trfmm_core::PlannerConfig::for_resolution(map.resolution());
    let defaults = trfmm_core::SimConfig::new(trfmm_core::Pose::new(0.0, 0.0, 0.0), a.goal, map.resolution());
    cfg.dyn_obstacle_radius = defaults.planner_cfg.dyn_obstacle_radius;
    let obstacles = tracks_file.latest_positions();
    let velocity = build_velocity_map(&map, &d.clearance, &obstacles, &cfg);
    let result = match which {
        Planner::Fmm => planner::plan_fmm(&map, &velocity, a.robot, a.goal, &cfg),
        Planner::TrFmm => {
            let region = |p: WorldPoint| {
                map.world_to_cell(p)
                    .ok()
                    .and_then(|c| d.regions.region_of(c))
                    .ok_or_else(|| config(format!("({}, {}) is not in reachable free space", p.x, p.y)))
            };
            let window = TrackWindow {
                window: tracks_file.window.unwrap_or(DEFAULT_TRACK_WINDOW),
                now: tracks_file.now(),
            };
            let tr = build_traversability_map(
                &d.regions,
                &d.graph,
                &tracks,
                window,
                region(a.robot)?,
                region(a.goal)?,
                &d.clearance,
            )
            .map_err(runtime)?;
            planner::plan(&map, &d.regions, &velocity, &tr, a.robot, a.goal, &cfg)
        }
    }
    .map_err(runtime)?;
    let out = PlanOutput {
        planner: which,
        length: result.path.windows(2).map(|w| w[0].distance(&w[1])).sum(),
        region_tr: (which == Planner::TrFmm).then(|| result.tr_values.clone()),
        path: result.path,
        plan_time_ms: result.plan_time_ms,
    };
    write_out(a.out.as_deref(), &(serde_json::to_string_pretty(&out).expect("plan output serializes") + "\n"))
}

fn episode_setup(a: &EpisodeArgs) -> Result<(trfmm_core::World, trfmm_core::SimConfig), CliError> {
    let which: Planner = a.planner.parse().map_err(config)?;
    let mode: PerceptionMode = a.perception.parse().map_err(config)?;
    let loaded = Scenario::load(&a.scenario).map_err(config)?;
    let mut cfg = loaded.sim_config(a.goal, which, mode, a.seed).map_err(config)?;
    cfg.replan_enabled = !a.no_replan;
    let world = loaded.world().map_err(config)?;
    cfg.validate(&world).map_err(config)?;
    Ok((world, cfg))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let (world, mut cfg) = episode_setup(&a.episode)?;
    cfg.record_trace = a.trace;
    let ep = trfmm_core::sim::run_episode(&world, &cfg).map_err(runtime)?;
    if a.trace {
        let mut lines = String::new();
        for ev in &ep.trace {
            lines.push_str(&serde_json::to_string(ev).expect("trace events serialize"));
            lines.push('\n');
        }
        let trace_path = match &a.out {
            Some(p) => p.with_extension("trace.jsonl"),
            None => PathBuf::from("trace.jsonl"),
        };
        write_out(Some(&trace_path), &lines)?;
    }
    write_out(a.out.as_deref(), &(serde_json::to_string_pretty(&ep.metrics).expect("metrics serialize") + "\n"))
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(out) = &a.out {
        spec.out_dir = out.clone();
    }
    if let Some(n) = a.seeds {
        spec.seeds = (0..n).collect();
    }
    if a.compare_replanning {
        let report = compare_replanning(&spec)?;
        eprintln!(
            "{} pairs; median idle {:?} s replanning, {:?} s planning once",
            report.pairs.len(),
            report.idle_median_replanning,
            report.idle_median_planning_once
        );
    } else {
        let report = run_experiments(&spec)?;
        for c in &report.configs {
            eprintln!(
                "{} {} goal {}: {}/{} successful",
                c.key.planner,
                c.key.perception,
                c.key.goal,
                c.outcome_counts[0] + c.outcome_counts[1],
                c.runs
            );
        }
    }
    Ok(())
}

fn cmd_discretize(a: &DiscretizeArgs) -> Result<(), CliError> {
    let map = a.map.load()?;
    let mut cfg = DiscretizeConfig::for_resolution(map.resolution());
    if let Some(c) = a.seed_min_clearance {
        cfg.seed_min_clearance = c;
    }
    cfg.max_region_area = a.max_region_area;
    let d = regions::discretize(&map, &cfg).map_err(runtime)?;
    let art = RegionArtifact::new(&map, &d);
    write_out(Some(&a.out), &(serde_json::to_string(&art).expect("artifact serializes") + "\n"))?;
    if let Some(p) = &a.clearance {
        let bytes = if p.extension().is_some_and(|e| e == "csv") {
            field_to_csv(&d.clearance).into_bytes()
        } else {
            field_to_bytes(&d.clearance)
        };
        fs::write(p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    eprintln!("{} regions, {} edges", d.regions.len(), d.graph.edges.len());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let (world, cfg) = episode_setup(&a.episode)?;
    if !(a.pace >= 0.0 && a.pace.is_finite()) {
        return Err(config("pace must be a finite non-negative number"));
    }
    let session = Session::new(world, cfg).map_err(config)?;
    let opts = ServeOptions {
        broadcast_period: Duration::from_millis(a.broadcast_ms.max(1)),
        pace: a.pace,
        command_log: a.log.clone(),
    };
    let handle = serve(session, a.bind.as_str(), opts).map_err(config)?;
    eprintln!("serving on ws://{} (paused; send a resume command)", handle.local_addr());
    handle.wait();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Discretize(a) => cmd_discretize(a),
        Cmd::Serve(a) => cmd_serve(a),
    }
}
