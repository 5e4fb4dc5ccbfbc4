mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::oracles::{dijkstra8, euclid, random_free_cell, walled_map};
use trfmm_core::eikonal::{descend_path, propagate, EikonalError};
use trfmm_core::{Cell, CellIndex, GridMap, VelocityField, WorldPoint};

fn free(w: usize, h: usize, res: f64) -> GridMap {
    GridMap::filled(w, h, res, WorldPoint::default(), Cell::Free).unwrap()
}

#[test]
fn corner_to_corner_within_five_percent() {
    let m = free(100, 100, 0.05);
    let f = propagate(&m, &[CellIndex::new(0, 0)], &VelocityField::uniform(&m), None).unwrap();
    let got = f.field.get(CellIndex::new(99, 99)).unwrap();
    let exact = 99.0 * std::f64::consts::SQRT_2 * 0.05;
    assert!((got - exact).abs() / exact < 0.05, "got {got}, exact {exact}");
}

#[test]
fn bounded_by_euclid_and_dijkstra_on_walled_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let m = walled_map(&mut rng, 30, 30, 1.0, 25, 10);
        let Some(src) = random_free_cell(&mut rng, &m) else { continue };
        let f = propagate(&m, &[src], &VelocityField::uniform(&m), None).unwrap();
        let d8 = dijkstra8(&m, src);
        for i in 0..m.len() {
            let c = m.index_of(i);
            match (f.field.get(c), d8[i]) {
                (Some(t), Some(d)) => {
                    assert!(t >= euclid(&m, src, c) - 1e-9, "below euclid at {c:?}");
                    assert!(t <= d + 1e-9, "above dijkstra at {c:?}: {t} > {d}");
                }
                (None, None) => {}
                other => panic!("reachability differs at {c:?}: {other:?}"),
            }
        }
    }
}

#[test]
fn descent_reaches_source_from_every_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..6 {
        let m = if k == 0 { free(60, 40, 0.1) } else { walled_map(&mut rng, 50, 50, 0.1, 30, 15) };
        let Some(src) = random_free_cell(&mut rng, &m) else { continue };
        let f = propagate(&m, &[src], &VelocityField::uniform(&m), None).unwrap();
        for i in 0..m.len() {
            let c = m.index_of(i);
            if f.field.get(c).is_none() {
                continue;
            }
            let p = m.cell_to_world(c);
            let path = descend_path(&f.field, p, 0.5 * m.resolution()).unwrap();
            let end = *path.last().unwrap();
            assert_eq!(m.world_to_cell(end).unwrap(), src);
        }
    }
}

#[test]
fn descent_stays_near_straight_segment_on_empty_map() {
    let m = free(50, 50, 1.0);
    let src = CellIndex::new(25, 25);
    let f = propagate(&m, &[src], &VelocityField::uniform(&m), None).unwrap();
    let s = m.cell_to_world(src);
    let tol = std::f64::consts::SQRT_2 * m.resolution();
    for &start in &[CellIndex::new(0, 0), CellIndex::new(49, 3), CellIndex::new(10, 49), CellIndex::new(49, 30)] {
        let a = m.cell_to_world(start);
        let path = descend_path(&f.field, a, 0.5).unwrap();
        for p in &path {
            // distance from p to segment a-s
            let (dx, dy) = (s.x - a.x, s.y - a.y);
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let q = WorldPoint::new(a.x + t * dx, a.y + t * dy);
            assert!(p.distance(&q) <= tol, "sample {p:?} strays from {start:?}");
        }
    }
}

#[test]
fn descent_values_strictly_decrease() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = walled_map(&mut rng, 40, 40, 0.25, 20, 12);
    let src = random_free_cell(&mut rng, &m).unwrap();
    let f = propagate(&m, &[src], &VelocityField::uniform(&m), None).unwrap();
    for i in (0..m.len()).step_by(7) {
        let c = m.index_of(i);
        if f.field.get(c).is_none() {
            continue;
        }
        let path = descend_path(&f.field, m.cell_to_world(c), 0.125).unwrap();
        let values: Vec<f64> = path
            .iter()
            .map(|p| f.field.interpolate(*p).map(|v| v.0).unwrap_or_else(|| f.field.get(m.world_to_cell(*p).unwrap()).unwrap()))
            .collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "non-decreasing descent from {c:?}");
    }
}

#[test]
fn descent_from_unreached_pocket_fails() {
    let rows = ["......", ".####.", ".#..#.", ".####.", "......"];
    let m = support::oracles::ascii(&rows, 1.0);
    let f = propagate(&m, &[CellIndex::new(0, 0)], &VelocityField::uniform(&m), None).unwrap();
    let pocket = m.cell_to_world(CellIndex::new(2, 2));
    assert_eq!(descend_path(&f.field, pocket, 0.5).unwrap_err(), EikonalError::Unreachable);
}

#[test]
fn faster_speed_never_increases_arrival() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    use rand::Rng;
    for _ in 0..30 {
        let m = walled_map(&mut rng, 20, 20, 1.0, 8, 8);
        let Some(src) = random_free_cell(&mut rng, &m) else { continue };
        let slow: Vec<f64> = (0..m.len()).map(|_| rng.random_range(0.2..1.0)).collect();
        let fast: Vec<f64> = slow.iter().map(|s| s + rng.random_range(0.0..0.5)).collect();
        let a = propagate(&m, &[src], &VelocityField::from_speeds(&m, slow), None).unwrap();
        let b = propagate(&m, &[src], &VelocityField::from_speeds(&m, fast), None).unwrap();
        for (x, y) in a.field.iter().zip(b.field.iter()) {
            if let (Some(x), Some(y)) = (x, y) {
                assert!(y <= x + 1e-12);
            }
        }
    }
}
