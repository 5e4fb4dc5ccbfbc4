//! Independent reference computations for the solver tests. Nothing here
//! calls into the marcher.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use trfmm_core::{Cell, CellIndex, GridMap, WorldPoint};

/// Random map with axis-aligned wall segments, each up to `max_len` cells.
pub fn walled_map<R: Rng>(rng: &mut R, w: usize, h: usize, res: f64, walls: usize, max_len: usize) -> GridMap {
    let mut cells = vec![Cell::Free; w * h];
    for _ in 0..walls {
        let c = rng.random_range(0..w);
        let r = rng.random_range(0..h);
        let len = rng.random_range(1..=max_len);
        let horizontal = rng.random_bool(0.5);
        for k in 0..len {
            let (cc, rr) = if horizontal { (c + k, r) } else { (c, r + k) };
            if cc < w && rr < h {
                cells[rr * w + cc] = Cell::Occupied;
            }
        }
    }
    GridMap::new(w, h, res, WorldPoint::default(), cells).unwrap()
}

pub fn random_free_cell<R: Rng>(rng: &mut R, map: &GridMap) -> Option<CellIndex> {
    let free: Vec<usize> = (0..map.len()).filter(|&i| map.cells()[i] == Cell::Free).collect();
    if free.is_empty() {
        return None;
    }
    Some(map.index_of(free[rng.random_range(0..free.len())]))
}

/// 8-connected Dijkstra with unit / sqrt(2) step costs (times resolution).
/// Diagonal moves need at least one free side cell.
pub fn dijkstra8(map: &GridMap, source: CellIndex) -> Vec<Option<f64>> {
    let (w, h) = (map.width() as isize, map.height() as isize);
    let free = |c: isize, r: isize| map.cell_at(c, r) == Cell::Free;
    let mut dist = vec![f64::INFINITY; map.len()];
    let mut heap = BinaryHeap::new();
    let s = map.linear(source);
    dist[s] = 0.0;
    heap.push(Reverse((0u64, s)));
    let res = map.resolution();
    while let Some(Reverse((bits, i))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[i] {
            continue;
        }
        let (c, r) = ((i % map.width()) as isize, (i / map.width()) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nc, nr) = (c + dc, r + dr);
                if nc < 0 || nr < 0 || nc >= w || nr >= h || !free(nc, nr) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && !free(c + dc, r) && !free(c, r + dr) {
                    continue;
                }
                let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * res;
                let j = (nr * w + nc) as usize;
                if d + step < dist[j] {
                    dist[j] = d + step;
                    heap.push(Reverse(((d + step).to_bits(), j)));
                }
            }
        }
    }
    dist.into_iter().map(|d| d.is_finite().then_some(d)).collect()
}

pub fn euclid(map: &GridMap, a: CellIndex, b: CellIndex) -> f64 {
    let dc = a.col as f64 - b.col as f64;
    let dr = a.row as f64 - b.row as f64;
    (dc * dc + dr * dr).sqrt() * map.resolution()
}

/// 4-connected flood fill component ids over free cells.
pub fn components(map: &GridMap) -> Vec<Option<usize>> {
    let mut comp = vec![None; map.len()];
    let mut next = 0;
    for start in 0..map.len() {
        if map.cells()[start] != Cell::Free || comp[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = Some(next);
        while let Some(i) = stack.pop() {
            let c = map.index_of(i);
            let mut push = |cc: usize, rr: usize| {
                let j = rr * map.width() + cc;
                if map.cells()[j] == Cell::Free && comp[j].is_none() {
                    comp[j] = Some(next);
                    stack.push(j);
                }
            };
            if c.col > 0 {
                push(c.col - 1, c.row);
            }
            if c.col + 1 < map.width() {
                push(c.col + 1, c.row);
            }
            if c.row > 0 {
                push(c.col, c.row - 1);
            }
            if c.row + 1 < map.height() {
                push(c.col, c.row + 1);
            }
        }
        next += 1;
    }
    comp
}

/// Parses rows of '#' / '.' (first string is row 0).
pub fn ascii(rows: &[&str], res: f64) -> GridMap {
    let h = rows.len();
    let w = rows[0].len();
    let mut cells = Vec::with_capacity(w * h);
    for row in rows {
        assert_eq!(row.len(), w);
        cells.extend(row.chars().map(|ch| if ch == '#' { Cell::Occupied } else { Cell::Free }));
    }
    GridMap::new(w, h, res, WorldPoint::default(), cells).unwrap()
}

/// Shortest distances from `root` by enumerating every simple path.
pub fn enumerate_shortest(n: usize, edges: &[(usize, usize, f64)], root: usize) -> Vec<Option<f64>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, l) in edges {
        adj[a].push((b, l));
        adj[b].push((a, l));
    }
    let mut best = vec![None; n];
    let mut on_path = vec![false; n];
    fn walk(
        u: usize,
        d: f64,
        adj: &[Vec<(usize, f64)>],
        on_path: &mut [bool],
        best: &mut [Option<f64>],
    ) {
        if best[u].is_none_or(|b: f64| d < b) {
            best[u] = Some(d);
        }
        on_path[u] = true;
        for &(v, l) in &adj[u] {
            if !on_path[v] {
                walk(v, d + l, adj, on_path, best);
            }
        }
        on_path[u] = false;
    }
    walk(root, 0.0, &adj, &mut on_path, &mut best);
    best
}

/// Greedy seed selection done the slow way: rescan the whole working copy
/// for its maximum every round and zero a disc by brute-force distance.
pub fn greedy_seeds(map: &GridMap, clearance: &[f64], threshold: f64) -> Vec<CellIndex> {
    let mut work: Vec<f64> = clearance.to_vec();
    for (i, c) in map.cells().iter().enumerate() {
        if *c == Cell::Occupied {
            work[i] = 0.0;
        }
    }
    let mut seeds = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..work.len() {
            if map.cells()[i] == Cell::Free && work[i] > 0.0 && best.is_none_or(|b| work[i] > work[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        let v = work[b];
        if !seeds.is_empty() && v < threshold {
            break;
        }
        let c = map.index_of(b);
        seeds.push(c);
        for j in 0..work.len() {
            let q = map.index_of(j);
            if euclid(map, c, q) <= v + 1e-9 * map.resolution() {
                work[j] = 0.0;
            }
        }
        work[b] = 0.0;
    }
    seeds
}

/// Wavefront entry as the reference queue sees it.
#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub cell: usize,
    pub arrival: f64,
    pub tr: f64,
}

/// Ordered list kept by scanning for the first element the new entry beats
/// and inserting there, else appending.
#[derive(Debug, Default)]
pub struct ListQueue {
    pub items: Vec<Entry>,
}

impl ListQueue {
    pub fn insert(&mut self, e: Entry) {
        let mut at = self.items.len();
        for (k, x) in self.items.iter().enumerate() {
            let beats = e.tr > x.tr
                || (e.tr == x.tr && e.arrival < x.arrival)
                || (e.tr == x.tr && e.arrival == x.arrival && e.cell < x.cell);
            if beats {
                at = k;
                break;
            }
        }
        self.items.insert(at, e);
    }

    pub fn pop_front(&mut self) -> Option<Entry> {
        if self.items.is_empty() {
            None
        } else {
            Some(self.items.remove(0))
        }
    }
}

impl trfmm_core::eikonal::Frontier for ListQueue {
    fn push(&mut self, e: trfmm_core::eikonal::FrontierEntry) {
        self.insert(Entry {
            cell: e.cell,
            arrival: e.arrival,
            tr: e.tr,
        });
    }

    fn pop(&mut self) -> Option<trfmm_core::eikonal::FrontierEntry> {
        self.pop_front().map(|e| trfmm_core::eikonal::FrontierEntry {
            cell: e.cell,
            arrival: e.arrival,
            tr: e.tr,
        })
    }
}
