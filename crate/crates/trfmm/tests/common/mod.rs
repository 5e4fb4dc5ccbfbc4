//! Shared session fixture: a main room with four pillars and a sealed
//! closet on the right.
#![allow(dead_code)]

use trfmm::io::parse_ascii;
use trfmm_core::sim::AgentSpawn;
use trfmm_core::{regions, DiscretizeConfig, Pose, SimConfig, World, WorldPoint};

pub const MAP: &str = "\
30 14 0.25
##############################
#.....................#......#
#.....................#......#
#......##.......##....#......#
#......##.......##....#......#
#.....................#......#
#.....................#......#
#.....................########
#.....................#......#
#......##.......##....#......#
#......##.......##....#......#
#.....................#......#
#.....................#......#
##############################
";

pub fn world() -> World {
    let map = parse_ascii(MAP).unwrap();
    let d = regions::discretize(&map, &DiscretizeConfig::for_resolution(0.25)).unwrap();
    World { map, discretization: d }
}

pub fn config() -> SimConfig {
    let mut cfg = SimConfig::new(Pose::new(0.6, 1.75, 0.0), WorldPoint::new(4.5, 1.75), 0.25);
    cfg.agents = vec![
        AgentSpawn { x: 3.0, y: 2.5, heading: 1.0 },
        AgentSpawn { x: 3.0, y: 0.6, heading: -2.0 },
    ];
    cfg.seed = 11;
    cfg.record_trace = true;
    cfg.planner_cfg.dyn_obstacle_radius = cfg.robot.radius + cfg.agent.radius;
    cfg
}

