//! Seeded experiment sweeps and their reports.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trfmm_core::sim::run_episode;
use trfmm_core::{Outcome, PerceptionMode, Planner, RunMetrics, SimConfig, World};

use crate::scenario::{read_json, LoadedScenario, Scenario, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Whether the error stems from the inputs rather than from running.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Scenario(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn default_perception() -> Vec<String> {
    vec![PerceptionMode::AllKnown.name().into()]
}

fn default_goals() -> Vec<usize> {
    vec![0]
}

pub fn default_seeds() -> Vec<u64> {
    (0..25).collect()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: PathBuf,
    pub planners: Vec<String>,
    #[serde(default = "default_perception")]
    pub perception: Vec<String>,
    #[serde(default = "default_goals")]
    pub goals: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default = "yes")]
    pub replan: bool,
    /// Overrides the scenario's pre-roll fraction.
    #[serde(default)]
    pub preroll_fraction: Option<f64>,
    /// Keeps wall-clock plan times, which makes outputs differ run to run.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentSpec {
    /// Reads a spec file. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut spec: ExperimentSpec = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if spec.scenario.is_relative() {
            spec.scenario = base.join(&spec.scenario);
        }
        if spec.out_dir.is_relative() {
            spec.out_dir = base.join(&spec.out_dir);
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub planner: Planner,
    pub perception: PerceptionMode,
    pub goal: usize,
}

impl ConfigKey {
    fn file_stem(&self) -> String {
        format!("{}_{}_g{}", self.planner, self.perception, self.goal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub key: ConfigKey,
    pub seed: u64,
    pub metrics: Option<RunMetrics>,
    /// Set when the episode errored or panicked.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn outcome_name(&self) -> &'static str {
        self.metrics.as_ref().map_or("error", |m| m.outcome.name())
    }

    pub fn is_success(&self) -> bool {
        self.metrics.as_ref().is_some_and(|m| m.outcome.is_success())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Stats {
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

/// Per-run metrics that feed the distributions, in CSV column order.
pub const METRIC_COLUMNS: [&str; 8] = [
    "traveled_distance",
    "mission_time",
    "idle_time",
    "idle_fraction",
    "min_obstacle_distance",
    "mean_obstacle_distance",
    "replan_count",
    "plan_time_mean_ms",
];

fn metric_values(m: &RunMetrics) -> [Option<f64>; 8] {
    [
        Some(m.traveled_distance),
        Some(m.mission_time),
        Some(m.idle_time),
        (m.mission_time > 0.0).then(|| m.idle_time / m.mission_time),
        m.min_obstacle_distance,
        m.mean_obstacle_distance,
        Some(m.replan_count as f64),
        Some(m.plan_time_mean_ms),
    ]
}

pub const OUTCOME_COLUMNS: [&str; 5] = [
    "success_clean",
    "success_noncritical",
    "failure_critical",
    "failure_no_collision",
    "error",
];

/// One configuration's results. Metric distributions cover successful runs
/// only; outcome counts cover every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub key: ConfigKey,
    pub runs: usize,
    pub outcome_counts: [usize; 5],
    pub success_rate: f64,
    pub metrics: Vec<Option<Stats>>,
}

impl ConfigSummary {
    pub fn from_runs(key: ConfigKey, runs: &[&RunRecord]) -> Self {
        let mut counts = [0usize; 5];
        for r in runs {
            let i = OUTCOME_COLUMNS.iter().position(|c| *c == r.outcome_name()).expect("known outcome");
            counts[i] += 1;
        }
        let ok: Vec<&RunMetrics> = runs.iter().filter(|r| r.is_success()).filter_map(|r| r.metrics.as_ref()).collect();
        let metrics = (0..METRIC_COLUMNS.len())
            .map(|k| Stats::of(&ok.iter().filter_map(|m| metric_values(m)[k]).collect::<Vec<_>>()))
            .collect();
        let successes = counts[0] + counts[1];
        Self {
            key,
            runs: runs.len(),
            outcome_counts: counts,
            success_rate: if runs.is_empty() { 0.0 } else { successes as f64 / runs.len() as f64 },
            metrics,
        }
    }

    /// Summed idle time over summed mission time across every run that
    /// finished, successful or not.
    pub fn idle_fraction_of(runs: &[&RunRecord]) -> Option<f64> {
        let (idle, total) = runs
            .iter()
            .filter_map(|r| r.metrics.as_ref())
            .fold((0.0, 0.0), |(i, t), m| (i + m.idle_time, t + m.mission_time));
        (total > 0.0).then(|| idle / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Sorted by configuration key.
    pub configs: Vec<ConfigSummary>,
    /// Sorted by configuration key, then seed.
    pub runs: Vec<RunRecord>,
}

impl AggregateReport {
    pub fn config(&self, key: ConfigKey) -> Option<&ConfigSummary> {
        self.configs.iter().find(|c| c.key == key)
    }

    pub fn runs_of(&self, key: ConfigKey) -> Vec<&RunRecord> {
        self.runs.iter().filter(|r| r.key == key).collect()
    }
}

struct Prepared {
    loaded: LoadedScenario,
    world: World,
    keys: Vec<ConfigKey>,
}

/// Checks every name and index before any episode runs.
fn prepare(spec: &ExperimentSpec) -> Result<Prepared, HarnessError> {
    if spec.planners.is_empty() || spec.perception.is_empty() || spec.goals.is_empty() || spec.seeds.is_empty() {
        return Err(HarnessError::Config("spec needs at least one planner, perception mode, goal and seed".into()));
    }
    let planners = spec
        .planners
        .iter()
        .map(|p| p.parse::<Planner>().map_err(|e| HarnessError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let modes = spec
        .perception
        .iter()
        .map(|p| p.parse::<PerceptionMode>().map_err(|e| HarnessError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(f) = spec.preroll_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(HarnessError::Config(format!("preroll_fraction {f} outside [0, 1]")));
        }
    }
    let loaded = Scenario::load(&spec.scenario)?;
    let count = loaded.scenario.goals.len();
    if let Some(&g) = spec.goals.iter().find(|g| **g >= count) {
        return Err(ScenarioError::GoalIndex { index: g, count }.into());
    }
    let world = loaded.world()?;
    let mut keys = Vec::new();
    for &planner in &planners {
        for &perception in &modes {
            for &goal in &spec.goals {
                keys.push(ConfigKey { planner, perception, goal });
            }
        }
    }
    keys.sort();
    keys.dedup();
    // Reject configs that can never start, such as a goal inside a wall.
    for k in &keys {
        let cfg = loaded.sim_config(k.goal, k.planner, k.perception, 0)?;
        cfg.validate(&world).map_err(|e| HarnessError::Config(format!("goal {}: {e}", k.goal)))?;
    }
    Ok(Prepared { loaded, world, keys })
}

fn sorted_seeds(seeds: &[u64]) -> Vec<u64> {
    let mut s = seeds.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn with_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs one episode, turning errors and panics into a record.
pub fn run_isolated(world: &World, cfg: &SimConfig) -> (Option<RunMetrics>, Option<String>) {
    match catch_unwind(AssertUnwindSafe(|| run_episode(world, cfg))) {
        Ok(Ok(ep)) => (Some(ep.metrics), None),
        Ok(Err(e)) => (None, Some(e.to_string())),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (None, Some(format!("panicked: {msg}")))
        }
    }
}

fn episode_config(
    p: &Prepared,
    spec: &ExperimentSpec,
    key: ConfigKey,
    seed: u64,
    replan: bool,
    preroll: Option<f64>,
) -> Result<SimConfig, ScenarioError> {
    let mut cfg = p.loaded.sim_config(key.goal, key.planner, key.perception, seed)?;
    cfg.replan_enabled = replan;
    if let Some(f) = preroll {
        cfg.preroll_fraction = f;
    }
    cfg.record_timing = spec.record_timing;
    Ok(cfg)
}

/// Runs the planner × perception × goal × seed cross product and writes
/// `runs/*.json`, `aggregate.csv` and the `plot_*.csv` data files.
pub fn run_experiments(spec: &ExperimentSpec) -> Result<AggregateReport, HarnessError> {
    let p = prepare(spec)?;
    let seeds = sorted_seeds(&spec.seeds);
    let jobs: Vec<(ConfigKey, u64)> = p.keys.iter().flat_map(|k| seeds.iter().map(move |s| (*k, *s))).collect();
    let runs: Vec<RunRecord> = with_pool(spec.parallelism, || {
        jobs.par_iter()
            .map(|&(key, seed)| {
                let (metrics, error) = match episode_config(&p, spec, key, seed, spec.replan, spec.preroll_fraction) {
                    Ok(cfg) => run_isolated(&p.world, &cfg),
                    Err(e) => (None, Some(e.to_string())),
                };
                RunRecord { key, seed, metrics, error }
            })
            .collect()
    })?;
    let configs = p
        .keys
        .iter()
        .map(|k| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.key == *k).collect();
            ConfigSummary::from_runs(*k, &mine)
        })
        .collect();
    let report = AggregateReport { configs, runs };
    write_report(&spec.out_dir, &report)?;
    Ok(report)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Column names of `aggregate.csv`, in order.
pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["planner", "perception", "goal", "runs"].iter().map(|s| s.to_string()).collect();
    h.extend(OUTCOME_COLUMNS.iter().map(|s| s.to_string()));
    h.push("success_rate".into());
    for m in METRIC_COLUMNS {
        for s in ["min", "median", "mean", "max"] {
            h.push(format!("{m}_{s}"));
        }
    }
    h
}

pub fn write_report(out: &Path, report: &AggregateReport) -> Result<(), HarnessError> {
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
    for r in &report.runs {
        let path = runs_dir.join(format!("{}_s{}.json", r.key.file_stem(), r.seed));
        let json = serde_json::to_string_pretty(r).expect("run records serialize");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
    }

    let mut w = csv::Writer::from_path(out.join("aggregate.csv"))?;
    w.write_record(aggregate_header())?;
    for c in &report.configs {
        let mut row = vec![c.key.planner.to_string(), c.key.perception.to_string(), c.key.goal.to_string(), c.runs.to_string()];
        row.extend(c.outcome_counts.iter().map(|n| n.to_string()));
        row.push(fmt_f(c.success_rate));
        for s in &c.metrics {
            match s {
                Some(s) => row.extend([s.min, s.median, s.mean, s.max].map(fmt_f)),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(out))?;

    type Column = fn(&RunMetrics) -> Option<f64>;
    let plots: [(&str, &[(&str, Column)]); 3] = [
        ("plot_distance.csv", &[("traveled_distance", |m| Some(m.traveled_distance))]),
        (
            "plot_time.csv",
            &[("mission_time", |m| Some(m.mission_time)), ("idle_time", |m| Some(m.idle_time))],
        ),
        (
            "plot_obstacle_distance.csv",
            &[
                ("min_obstacle_distance", |m| m.min_obstacle_distance),
                ("mean_obstacle_distance", |m| m.mean_obstacle_distance),
            ],
        ),
    ];
    for (name, cols) in plots {
        let mut w = csv::Writer::from_path(out.join(name))?;
        let mut header = vec!["planner", "perception", "goal", "seed", "outcome"];
        header.extend(cols.iter().map(|c| c.0));
        w.write_record(&header)?;
        for r in &report.runs {
            let mut row = vec![
                r.key.planner.to_string(),
                r.key.perception.to_string(),
                r.key.goal.to_string(),
                r.seed.to_string(),
                r.outcome_name().to_string(),
            ];
            row.extend(cols.iter().map(|c| fmt_opt(r.metrics.as_ref().and_then(c.1))));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(out))?;
    }

    let mut w = csv::Writer::from_path(out.join("plot_success.csv"))?;
    w.write_record(["planner", "perception", "goal", "outcome", "count", "fraction"])?;
    for c in &report.configs {
        for (name, n) in OUTCOME_COLUMNS.iter().zip(c.outcome_counts) {
            w.write_record([
                c.key.planner.to_string(),
                c.key.perception.to_string(),
                c.key.goal.to_string(),
                name.to_string(),
                n.to_string(),
                fmt_f(n as f64 / c.runs.max(1) as f64),
            ])?;
        }
    }
    w.flush().map_err(io_err(out))?;
    Ok(())
}

/// One seed run with replanning and once without.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub perception: PerceptionMode,
    pub goal: usize,
    pub seed: u64,
    pub replanning: RunRecord,
    pub planning_once: RunRecord,
}

impl PairedRun {
    /// Planning-once minus replanning for distance, mission time and idle
    /// time. `None` unless both runs finished.
    pub fn deltas(&self) -> Option<[f64; 3]> {
        let a = self.replanning.metrics.as_ref()?;
        let b = self.planning_once.metrics.as_ref()?;
        Some([
            b.traveled_distance - a.traveled_distance,
            b.mission_time - a.mission_time,
            b.idle_time - a.idle_time,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub planner: Planner,
    pub preroll_fraction: f64,
    pub pairs: Vec<PairedRun>,
    pub idle_median_replanning: Option<f64>,
    pub idle_median_planning_once: Option<f64>,
}

fn median_idle(runs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    Stats::of(&runs.flatten().collect::<Vec<_>>()).map(|s| s.median)
}

/// Runs every seed with and without replanning. Both arms start after the
/// same obstacle pre-roll (20% unless the spec says otherwise), which is
/// excluded from mission time. Writes `paired.csv`.
pub fn compare_replanning(spec: &ExperimentSpec) -> Result<PairedReport, HarnessError> {
    if spec.planners.len() != 1 {
        return Err(HarnessError::Config("replanning comparison takes exactly one planner".into()));
    }
    let p = prepare(spec)?;
    let preroll = spec.preroll_fraction.unwrap_or(0.2);
    let seeds = sorted_seeds(&spec.seeds);
    let jobs: Vec<(ConfigKey, u64)> = p.keys.iter().flat_map(|k| seeds.iter().map(move |s| (*k, *s))).collect();
    let run = |key: ConfigKey, seed: u64, replan: bool| {
        let (metrics, error) = match episode_config(&p, spec, key, seed, replan, Some(preroll)) {
            Ok(cfg) => run_isolated(&p.world, &cfg),
            Err(e) => (None, Some(e.to_string())),
        };
        RunRecord { key, seed, metrics, error }
    };
    let pairs: Vec<PairedRun> = with_pool(spec.parallelism, || {
        jobs.par_iter()
            .map(|&(key, seed)| PairedRun {
                perception: key.perception,
                goal: key.goal,
                seed,
                replanning: run(key, seed, true),
                planning_once: run(key, seed, false),
            })
            .collect()
    })?;
    let report = PairedReport {
        planner: p.keys[0].planner,
        preroll_fraction: preroll,
        idle_median_replanning: median_idle(pairs.iter().map(|r| r.replanning.metrics.as_ref().map(|m| m.idle_time))),
        idle_median_planning_once: median_idle(pairs.iter().map(|r| r.planning_once.metrics.as_ref().map(|m| m.idle_time))),
        pairs,
    };

    fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;
    let mut w = csv::Writer::from_path(spec.out_dir.join("paired.csv"))?;
    w.write_record([
        "planner",
        "perception",
        "goal",
        "seed",
        "outcome_replanning",
        "outcome_planning_once",
        "delta_traveled_distance",
        "delta_mission_time",
        "delta_idle_time",
    ])?;
    for r in &report.pairs {
        let d = r.deltas();
        w.write_record([
            report.planner.to_string(),
            r.perception.to_string(),
            r.goal.to_string(),
            r.seed.to_string(),
            r.replanning.outcome_name().to_string(),
            r.planning_once.outcome_name().to_string(),
            fmt_opt(d.map(|d| d[0])),
            fmt_opt(d.map(|d| d[1])),
            fmt_opt(d.map(|d| d[2])),
        ])?;
    }
    w.flush().map_err(io_err(&spec.out_dir))?;
    Ok(report)
}

/// Key for one outcome category, for callers matching on [`Outcome`].
pub fn outcome_column(o: Outcome) -> usize {
    OUTCOME_COLUMNS.iter().position(|c| *c == o.name()).expect("every outcome has a column")
}
