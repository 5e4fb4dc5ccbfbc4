mod support;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{components, dijkstra8, euclid, greedy_seeds, walled_map};
use trfmm_core::eikonal::obstacle_distance;
use trfmm_core::regions::{discretize, find_seeds, partition, CellLabel, DiscretizeConfig};
use trfmm_core::{Cell, CellIndex, GridMap};

fn random_maps(n: usize, seed: u64) -> Vec<GridMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = rng.random_range(15..45);
            let h = rng.random_range(15..45);
            let walls = rng.random_range(0..30);
            walled_map(&mut rng, w, h, 0.1, walls, 12)
        })
        .collect()
}

#[test]
fn every_free_cell_gets_one_region() {
    for m in random_maps(50, 11) {
        let Ok(d) = discretize(&m, &DiscretizeConfig::for_resolution(0.1)) else {
            assert_eq!(m.free_count(), 0);
            continue;
        };
        let mut counted = 0;
        for r in &d.regions.regions {
            for c in &r.cells {
                assert_eq!(d.regions.label(*c), CellLabel::Region(r.id));
            }
            counted += r.area_cells();
        }
        assert_eq!(counted, m.free_count());
        for i in 0..m.len() {
            let c = m.index_of(i);
            match (m.cells()[i], d.regions.label(c)) {
                (Cell::Occupied, CellLabel::Occupied) | (Cell::Free, CellLabel::Region(_)) => {}
                other => panic!("bad label at {c:?}: {other:?}"),
            }
        }
    }
}

#[test]
fn graph_is_symmetric_and_connected_per_component() {
    for m in random_maps(50, 12) {
        let Ok(d) = discretize(&m, &DiscretizeConfig::for_resolution(0.1)) else { continue };
        let g = &d.graph;
        for a in 0..g.node_count as u32 {
            for &(b, len) in g.neighbors(a) {
                assert!(len > 0.0);
                assert_eq!(g.edge_length(b, a), Some(len));
            }
        }
        // regions sharing a free component are linked through the graph
        let comp = components(&m);
        let region_comp: Vec<usize> = d
            .regions
            .regions
            .iter()
            .map(|r| comp[m.linear(r.seed)].unwrap())
            .collect();
        for start in 0..g.node_count {
            let mut seen = vec![false; g.node_count];
            let mut queue = VecDeque::from([start as u32]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                for &(v, _) in g.neighbors(u) {
                    if !seen[v as usize] {
                        seen[v as usize] = true;
                        queue.push_back(v);
                    }
                }
            }
            for other in 0..g.node_count {
                assert_eq!(seen[other], region_comp[other] == region_comp[start]);
            }
        }
    }
}

#[test]
fn rerun_is_bit_identical() {
    for m in random_maps(10, 13) {
        let cfg = DiscretizeConfig::for_resolution(0.1);
        assert_eq!(discretize(&m, &cfg), discretize(&m, &cfg));
    }
}

#[test]
fn greedy_seeds_match_slow_selection() {
    for m in random_maps(30, 14) {
        let clearance = obstacle_distance(&m);
        let raw: Vec<f64> = clearance.iter().map(|v| v.unwrap_or(0.0)).collect();
        let slow = greedy_seeds(&m, &raw, 0.2);
        let fast = find_seeds(&m, &clearance, 0.2);
        for c in &slow {
            assert!(fast.iter().any(|s| s.cell == *c), "missing {c:?}");
        }
        // every extra seed is alone in a component the greedy pass missed
        let comp = components(&m);
        for s in fast.iter().filter(|s| !slow.contains(&s.cell)) {
            let k = comp[m.linear(s.cell)];
            assert!(slow.iter().all(|c| comp[m.linear(*c)] != k));
            assert_eq!(fast.iter().filter(|t| comp[m.linear(t.cell)] == k).count(), 1);
        }
        assert!(fast.windows(2).all(|w| w[0].clearance >= w[1].clearance));
    }
}

#[test]
fn edge_lengths_bounded_by_seed_distances() {
    for m in random_maps(30, 15) {
        let Ok(d) = discretize(&m, &DiscretizeConfig::for_resolution(0.1)) else { continue };
        let trees: Vec<Vec<Option<f64>>> = d.regions.regions.iter().map(|r| dijkstra8(&m, r.seed)).collect();
        for e in &d.graph.edges {
            // multi-source arrival is at least the distance to the nearest seed,
            // less up to (1 - 1/sqrt 2) h per cell where two fronts merge in one
            // upwind update
            let nearest = |i: usize| {
                d.regions
                    .regions
                    .iter()
                    .map(|r| euclid(&m, r.seed, m.index_of(i)))
                    .fold(f64::INFINITY, f64::min)
            };
            // and at most the single-seed path length
            let mut upper = f64::INFINITY;
            let mut lower = f64::INFINITY;
            for i in 0..m.len() {
                let c = m.index_of(i);
                for n in [CellIndex::new(c.col + 1, c.row), CellIndex::new(c.col, c.row + 1)] {
                    if !m.contains(n) {
                        continue;
                    }
                    let (la, lb) = (d.regions.region_of(c), d.regions.region_of(n));
                    let pair = match (la, lb) {
                        (Some(x), Some(y)) if (x, y) == (e.a, e.b) => Some((i, m.linear(n))),
                        (Some(x), Some(y)) if (x, y) == (e.b, e.a) => Some((m.linear(n), i)),
                        _ => None,
                    };
                    if let Some((ia, ib)) = pair {
                        let s = trees[e.a as usize][ia].unwrap() + trees[e.b as usize][ib].unwrap();
                        upper = upper.min(s.max(m.resolution()));
                        lower = lower.min((nearest(ia) + nearest(ib)).max(m.resolution()));
                    }
                }
            }
            let slack = 2.0 * (1.0 - std::f64::consts::FRAC_1_SQRT_2) * m.resolution();
            assert!(e.length >= lower - slack && e.length <= upper + 1e-9, "{e:?} not in [{lower}, {upper}]");
        }
    }
}

#[test]
fn two_rooms_and_a_door() {
    let rows = [
        "#########",
        "#...#...#",
        "#.......#",
        "#...#...#",
        "#########",
    ];
    let m = support::oracles::ascii(&rows, 1.0);
    let (set, labeled) = partition(&m, &[CellIndex::new(2, 2), CellIndex::new(6, 2)]).unwrap();
    let g = trfmm_core::regions::build_graph(&set, &labeled);
    assert_eq!(g.edges.len(), 1);
    // door cell (4, 2) ties and goes to the lower id; its neighbor (5, 2)
    // is one step from seed 1
    assert_eq!(set.region_of(CellIndex::new(4, 2)), Some(0));
    assert!((g.edges[0].length - 3.0).abs() < 1e-12);
    // region areas by counting
    let left = (0..m.len()).filter(|&i| m.cells()[i] == Cell::Free && m.index_of(i).col < 4).count();
    assert_eq!(set.regions[0].area_cells(), left + 1);
}
