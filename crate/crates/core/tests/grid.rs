use proptest::prelude::*;
use trfmm_core::{Cell, CellIndex, GridMap, WorldPoint};

fn map_from(bits: &[bool], w: usize, h: usize) -> GridMap {
    let cells = bits.iter().map(|b| if *b { Cell::Occupied } else { Cell::Free }).collect();
    GridMap::new(w, h, 0.1, WorldPoint::new(-1.0, 2.0), cells).unwrap()
}

proptest! {
    #[test]
    fn inflation_is_monotone(bits in proptest::collection::vec(proptest::bool::weighted(0.1), 400), r1 in 0.0f64..0.5, dr in 0.0f64..0.5) {
        let m = map_from(&bits, 20, 20);
        let small = m.inflate(r1);
        let large = m.inflate(r1 + dr);
        for i in 0..m.len() {
            if m.cells()[i] == Cell::Occupied {
                prop_assert_eq!(small.cells()[i], Cell::Occupied);
            }
            if small.cells()[i] == Cell::Occupied {
                prop_assert_eq!(large.cells()[i], Cell::Occupied);
            }
        }
    }

    #[test]
    fn raycast_between_centers_is_symmetric(bits in proptest::collection::vec(proptest::bool::weighted(0.2), 400), a in 0usize..400, b in 0usize..400) {
        let m = map_from(&bits, 20, 20);
        let pa = m.cell_to_world(m.index_of(a));
        let pb = m.cell_to_world(m.index_of(b));
        let ab = m.raycast(pa, pb).unwrap();
        let ba = m.raycast(pb, pa).unwrap();
        prop_assert_eq!(ab.visible, ba.visible);
    }

    #[test]
    fn world_cell_round_trip(x in -1.0f64..0.999, y in 2.0f64..3.999) {
        let m = GridMap::filled(20, 20, 0.1, WorldPoint::new(-1.0, 2.0), Cell::Free).unwrap();
        let p = WorldPoint::new(x, y);
        let c = m.world_to_cell(p).unwrap();
        let back = m.cell_to_world(c);
        prop_assert!(back.distance(&p) <= 0.1 * std::f64::consts::FRAC_1_SQRT_2 + 1e-9);
        prop_assert_eq!(m.world_to_cell(back).unwrap(), c);
    }
}

#[test]
fn out_of_grid_points_are_rejected() {
    let m = GridMap::filled(20, 20, 0.1, WorldPoint::new(-1.0, 2.0), Cell::Free).unwrap();
    assert!(m.world_to_cell(WorldPoint::new(1.0, 2.5)).is_err());
    assert!(m.world_to_cell(WorldPoint::new(-1.0001, 2.5)).is_err());
    assert_eq!(m.world_to_cell(WorldPoint::new(-1.0, 2.0)).unwrap(), CellIndex::new(0, 0));
}

#[test]
fn diagonal_through_a_corner_is_symmetric() {
    let mut bits = vec![false; 400];
    bits[116] = true;
    let m = map_from(&bits, 20, 20);
    let pa = m.cell_to_world(m.index_of(178));
    let pb = m.cell_to_world(m.index_of(31));
    assert_eq!(m.raycast(pa, pb).unwrap().visible, m.raycast(pb, pa).unwrap().visible);
}
