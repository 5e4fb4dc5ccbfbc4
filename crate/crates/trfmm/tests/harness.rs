use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use trfmm::harness::{
    aggregate_header, compare_replanning, run_experiments, run_isolated, ConfigKey, ConfigSummary, ExperimentSpec,
    HarnessError, RunRecord, Stats,
};
use trfmm::scenario::Scenario;
use trfmm_core::{PerceptionMode, Planner, Pose};

const ROOM: &str = "\
24 14 0.25
########################
#......................#
#......................#
#......##.......##.....#
#......##.......##.....#
#......................#
#......................#
#......................#
#......................#
#......##.......##.....#
#......##.......##.....#
#......................#
#......................#
########################
";

fn write_fixture(dir: &Path, agents: &str) -> PathBuf {
    fs::write(dir.join("room.txt"), ROOM).unwrap();
    let scenario = format!(
        r#"{{
  "map": "room.txt",
  "robot_start": {{"x": 0.6, "y": 1.75, "heading": 0.0}},
  "goals": [{{"x": 5.3, "y": 1.75}}, {{"x": 5.3, "y": 3.0}}],
  "agents": [{agents}],
  "settings": {{"timeout": 40.0}}
}}"#
    );
    let path = dir.join("room.json");
    fs::write(&path, scenario).unwrap();
    path
}

fn spec(dir: &Path, agents: &str, planners: &[&str], seeds: &[u64]) -> ExperimentSpec {
    ExperimentSpec {
        scenario: write_fixture(dir, agents),
        planners: planners.iter().map(|s| s.to_string()).collect(),
        perception: vec!["all_known".into()],
        goals: vec![0],
        seeds: seeds.to_vec(),
        out_dir: dir.join("out"),
        parallelism: 2,
        replan: true,
        preroll_fraction: None,
        record_timing: false,
    }
}

const TWO_AGENTS: &str = r#"{"x": 3.0, "y": 2.5, "heading": 1.0}, {"x": 4.5, "y": 2.0, "heading": -2.0}"#;

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            for (k, v) in read_tree(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn sweep_writes_one_file_per_run_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), TWO_AGENTS, &["trfmm"], &[0, 1]);
    let report = run_experiments(&s).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(report.configs.len(), 1);

    let runs: Vec<_> = fs::read_dir(s.out_dir.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 2);
    assert!(s.out_dir.join("runs/trfmm_all_known_g0_s1.json").exists());

    let mut rdr = csv::Reader::from_path(s.out_dir.join("aggregate.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, aggregate_header());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "trfmm");
    assert_eq!(&rows[0][3], "2");
    for f in ["plot_distance.csv", "plot_time.csv", "plot_obstacle_distance.csv", "plot_success.csv"] {
        assert!(s.out_dir.join(f).exists(), "{f}");
    }

    let first = read_tree(&s.out_dir);
    fs::remove_dir_all(&s.out_dir).unwrap();
    let again = run_experiments(&s).unwrap();
    assert_eq!(again, report);
    assert_eq!(read_tree(&s.out_dir), first);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), TWO_AGENTS, &["trfmm", "fmm"], &[0, 1, 2]);
    s.parallelism = 1;
    let serial = run_experiments(&s).unwrap();
    s.parallelism = 3;
    assert_eq!(run_experiments(&s).unwrap(), serial);
}

#[test]
fn bad_names_fail_before_any_episode() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), TWO_AGENTS, &["trfmm", "astar"], &[0]);
    let err = run_experiments(&s).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("astar"));
    assert!(!s.out_dir.exists());

    let mut s = spec(dir.path(), TWO_AGENTS, &["trfmm"], &[0]);
    s.perception = vec!["sonar".into()];
    assert!(run_experiments(&s).unwrap_err().is_config());

    let mut s = spec(dir.path(), TWO_AGENTS, &["trfmm"], &[0]);
    s.goals = vec![5];
    assert!(run_experiments(&s).unwrap_err().is_config());
    assert!(!s.out_dir.exists());
}

#[test]
fn spec_paths_resolve_against_the_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), TWO_AGENTS);
    let path = dir.path().join("spec.json");
    fs::write(&path, r#"{"scenario": "room.json", "planners": ["fmm"], "out_dir": "results"}"#).unwrap();
    let s = ExperimentSpec::load(&path).unwrap();
    assert_eq!(s.scenario, dir.path().join("room.json"));
    assert_eq!(s.out_dir, dir.path().join("results"));
    assert_eq!(s.seeds, (0..25).collect::<Vec<_>>());
    assert_eq!(s.perception, vec!["all_known".to_string()]);

    fs::write(&path, r#"{"scenario": "room.json", "planners": ["fmm"], "out_dir": "r", "speed": 2}"#).unwrap();
    assert!(matches!(ExperimentSpec::load(&path), Err(HarnessError::Scenario(_))));
}

#[test]
fn failed_episodes_become_records() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = Scenario::load(&write_fixture(dir.path(), TWO_AGENTS)).unwrap();
    let world = loaded.world().unwrap();
    let mut cfg = loaded.sim_config(0, Planner::TrFmm, PerceptionMode::AllKnown, 0).unwrap();
    // start inside the wall
    cfg.robot_start = Pose::new(0.1, 0.1, 0.0);
    let (metrics, error) = run_isolated(&world, &cfg);
    assert!(metrics.is_none());
    assert!(error.is_some());

    let key = ConfigKey {
        planner: Planner::TrFmm,
        perception: PerceptionMode::AllKnown,
        goal: 0,
    };
    let good = loaded.sim_config(0, Planner::TrFmm, PerceptionMode::AllKnown, 0).unwrap();
    let (m, e) = run_isolated(&world, &good);
    assert!(e.is_none());
    let records = [
        RunRecord { key, seed: 0, metrics: m, error: None },
        RunRecord { key, seed: 1, metrics: None, error },
    ];
    assert_eq!(records[1].outcome_name(), "error");
    let summary = ConfigSummary::from_runs(key, &records.iter().collect::<Vec<_>>());
    assert_eq!(summary.runs, 2);
    assert_eq!(summary.outcome_counts[4], 1);
    assert_eq!(summary.success_rate, if records[0].is_success() { 0.5 } else { 0.0 });
}

#[test]
fn stats_use_the_middle_pair_for_even_counts() {
    let s = Stats::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((s.min, s.median, s.mean, s.max), (1.0, 2.5, 2.5, 4.0));
    assert_eq!(Stats::of(&[5.0, 1.0, 3.0]).unwrap().median, 3.0);
    assert!(Stats::of(&[]).is_none());
}

#[test]
fn without_obstacles_replanning_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "", &["trfmm"], &[0, 1, 2]);
    let report = compare_replanning(&s).unwrap();
    assert_eq!(report.preroll_fraction, 0.2);
    assert_eq!(report.pairs.len(), 3);
    for pair in &report.pairs {
        let d = pair.deltas().expect("both arms finish");
        for v in d {
            assert!(v.abs() < 1e-9, "seed {}: {d:?}", pair.seed);
        }
        assert!(pair.replanning.is_success());
    }
    assert!(s.out_dir.join("paired.csv").exists());

    let two = spec(dir.path(), "", &["trfmm", "fmm"], &[0]);
    assert!(compare_replanning(&two).unwrap_err().is_config());
}

#[test]
fn preroll_is_not_counted_as_mission_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), TWO_AGENTS, &["fmm"], &[0]);
    s.preroll_fraction = Some(0.0);
    let plain = compare_replanning(&s).unwrap();
    s.preroll_fraction = Some(0.5);
    let rolled = compare_replanning(&s).unwrap();
    let m0 = plain.pairs[0].replanning.metrics.as_ref().unwrap();
    let m1 = rolled.pairs[0].replanning.metrics.as_ref().unwrap();
    // 50% of a 40 s timeout would dwarf a mission this short
    assert!(m1.mission_time < 15.0, "{}", m1.mission_time);
    assert!((m1.mission_time - m0.mission_time).abs() < 10.0);
}
