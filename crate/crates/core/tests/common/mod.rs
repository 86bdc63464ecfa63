//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the planner; neighbor enumeration, step lengths and safe intervals
//! are recomputed from scratch.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use preflight::sfi::NoFlyZone;
use preflight::{GridMap, NfzRegion, Trajectory, Voxel};

const MARGIN: f64 = 1e-6;

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn neighbors(grid: &GridMap, v: Voxel) -> Vec<(Voxel, f64)> {
    let [nx, ny, nz] = grid.dims();
    let mut out = Vec::new();
    for dx in -1i64..=1 {
        for dy in -1i64..=1 {
            for dz in -1i64..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let (x, y, z) = (v.x as i64 + dx, v.y as i64 + dy, v.z as i64 + dz);
                if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
                    continue;
                }
                let n = Voxel::new(x as u32, y as u32, z as u32);
                if grid.blocked_at(n) {
                    continue;
                }
                out.push((n, ((dx * dx + dy * dy + dz * dz) as f64).sqrt()));
            }
        }
    }
    out
}

/// Shortest 26-connected path length between free voxels (Dijkstra).
pub fn shortest_distance(grid: &GridMap, start: Voxel, goal: Voxel) -> Option<f64> {
    let mut dist: HashMap<Voxel, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut ids: Vec<Voxel> = Vec::new();
    dist.insert(start, 0.0);
    ids.push(start);
    heap.push(Item(0.0, 0));
    while let Some(Item(d, i)) = heap.pop() {
        let v = ids[i];
        if d > dist[&v] {
            continue;
        }
        if v == goal {
            return Some(d);
        }
        for (n, w) in neighbors(grid, v) {
            let nd = d + w;
            if dist.get(&n).is_none_or(|&old| nd < old) {
                dist.insert(n, nd);
                ids.push(n);
                heap.push(Item(nd, ids.len() - 1));
            }
        }
    }
    None
}

/// Safe intervals of one voxel as `(start, end)` pairs.
pub fn safe_intervals(grid: &GridMap, nfzs: &[NoFlyZone], exempt: &[Voxel], v: Voxel) -> Vec<(f64, f64)> {
    if grid.blocked_at(v) {
        return Vec::new();
    }
    if exempt.contains(&v) {
        return vec![(0.0, f64::INFINITY)];
    }
    let mut windows: Vec<(f64, f64)> = nfzs
        .iter()
        .filter(|z| z.region.contains(v))
        .map(|z| (z.t_start, z.t_end))
        .collect();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut free_from = 0.0f64;
    for (a, b) in windows {
        if a > free_from {
            out.push((free_from, a));
        }
        free_from = free_from.max(b);
    }
    if free_from < f64::INFINITY {
        out.push((free_from, f64::INFINITY));
    }
    out
}

/// Earliest arrival at `goal` leaving `start` no earlier than `t0`, over the
/// time-expanded graph of (voxel, safe interval) states. Hovering is allowed
/// anywhere inside a safe interval; a move switches voxels at its midpoint,
/// which must fall in a safe interval of both voxels (with the same clearance
/// the planner keeps from interval boundaries). Label-setting is exact here
/// because leaving later never lets you arrive earlier.
pub fn earliest_arrival(
    grid: &GridMap,
    nfzs: &[NoFlyZone],
    exempt: &[Voxel],
    start: Voxel,
    goal: Voxel,
    speed: f64,
    t0: f64,
) -> Option<f64> {
    let mut cache: HashMap<Voxel, Vec<(f64, f64)>> = HashMap::new();
    let mut intervals = |v: Voxel| -> Vec<(f64, f64)> {
        cache
            .entry(v)
            .or_insert_with(|| safe_intervals(grid, nfzs, exempt, v))
            .clone()
    };
    let first = intervals(start).into_iter().position(|(_, b)| b > t0)?;
    let (a0, _) = intervals(start)[first];
    let g0 = t0.max(a0);
    let mut best: HashMap<(Voxel, usize), f64> = HashMap::new();
    let mut states: Vec<(Voxel, usize)> = vec![(start, first)];
    let mut heap = BinaryHeap::new();
    best.insert((start, first), g0);
    heap.push(Item(g0, 0));
    while let Some(Item(g, i)) = heap.pop() {
        let (v, k) = states[i];
        if g > best[&(v, k)] {
            continue;
        }
        if v == goal {
            return Some(g);
        }
        let here_end = intervals(v)[k].1;
        for (n, len) in neighbors(grid, v) {
            let delta = len / speed;
            let half = delta / 2.0;
            for (j, (a, b)) in intervals(n).into_iter().enumerate() {
                let t = (g + delta).max(a + half + MARGIN);
                if t - half + MARGIN > here_end {
                    break;
                }
                if t >= b {
                    continue;
                }
                if best.get(&(n, j)).is_none_or(|&old| t < old) {
                    best.insert((n, j), t);
                    states.push((n, j));
                    heap.push(Item(t, states.len() - 1));
                }
            }
        }
    }
    None
}

fn nearest_voxel(p: [f64; 3]) -> Option<Voxel> {
    // skip samples sitting exactly on a voxel face
    if p.iter().any(|&x| ((x - x.floor()) - 0.5).abs() < 1e-9) || p.iter().any(|&x| x < -0.5) {
        return None;
    }
    Some(Voxel::new(p[0].round() as u32, p[1].round() as u32, p[2].round() as u32))
}

/// Samples a waypoint list at `k * dt` and reports every sample at which the
/// occupied voxel is inside an active, non-exempt NFZ.
pub fn nfz_hits(tuples: &[preflight::Waypoint], nfzs: &[NoFlyZone], exempt: &[Voxel], dt: f64) -> Vec<(f64, Voxel)> {
    let mut hits = Vec::new();
    let (Some(first), Some(last)) = (tuples.first(), tuples.last()) else {
        return hits;
    };
    let mut k = (first.t / dt).ceil() as i64;
    let mut seg = 0usize;
    loop {
        let t = k as f64 * dt;
        if t > last.t {
            break;
        }
        while seg + 1 < tuples.len() - 1 && tuples[seg + 1].t <= t {
            seg += 1;
        }
        let (a, b) = if tuples.len() == 1 {
            (tuples[0], tuples[0])
        } else {
            (tuples[seg], tuples[seg + 1])
        };
        let s = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 1.0 };
        let (pa, pb) = (a.voxel.center(), b.voxel.center());
        let p: [f64; 3] = std::array::from_fn(|i| pa[i] + s * (pb[i] - pa[i]));
        if let Some(v) = nearest_voxel(p) {
            if !exempt.contains(&v) && nfzs.iter().any(|z| z.region.contains(v) && z.t_start <= t && t < z.t_end) {
                hits.push((t, v));
            }
        }
        k += 1;
    }
    hits
}

/// Pairs of agents whose separation drops to the threshold or below at some
/// sample `k * dt` (brute force over all pairs and samples).
pub fn sampled_conflict_pairs(paths: &[Trajectory], gamma: f64, dt: f64) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            let (a, b) = (&paths[i], &paths[j]);
            let lo = a.start_time().max(b.start_time());
            let hi = a.end_time().min(b.end_time());
            if lo > hi {
                continue;
            }
            let thr = a.radius + b.radius + gamma;
            let mut k = (lo / dt).ceil() as i64;
            while (k as f64) * dt <= hi {
                let t = k as f64 * dt;
                let (pa, pb) = (position(a, t), position(b, t));
                let d = (0..3).map(|i| (pa[i] - pb[i]).powi(2)).sum::<f64>().sqrt();
                if d <= thr {
                    let (x, y) = (a.uav.0.min(b.uav.0), a.uav.0.max(b.uav.0));
                    out.push((x, y));
                    break;
                }
                k += 1;
            }
        }
    }
    out.sort_unstable();
    out
}

/// Position of an agent at `t` by linear interpolation between waypoints.
pub fn position(p: &Trajectory, t: f64) -> [f64; 3] {
    let w = &p.tuples;
    let i = w.partition_point(|x| x.t <= t);
    if i == 0 {
        return w[0].voxel.center();
    }
    if i == w.len() {
        return w[w.len() - 1].voxel.center();
    }
    let (a, b) = (w[i - 1], w[i]);
    let s = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
    let (pa, pb) = (a.voxel.center(), b.voxel.center());
    std::array::from_fn(|k| pa[k] + s * (pb[k] - pa[k]))
}

/// A random single-agent instance: scattered blocks, a few leaky walls and
/// up to `max_nfzs` timed boxes.
pub struct World {
    pub grid: GridMap,
    pub nfzs: Vec<NoFlyZone>,
    pub start: Voxel,
    pub goal: Voxel,
    pub speed: f64,
    pub t0: f64,
}

pub fn random_voxel(rng: &mut ChaCha8Rng, dims: [u32; 3]) -> Voxel {
    Voxel::new(rng.gen_range(0..dims[0]), rng.gen_range(0..dims[1]), rng.gen_range(0..dims[2]))
}

pub fn world(seed: u64, max_side: u32, max_nfzs: usize) -> World {
    world_in(seed, [max_side, max_side, max_side.min(5)], max_nfzs, 1)
}

pub fn world_in(seed: u64, max_dims: [u32; 3], max_nfzs: usize, max_walls: u32) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [rng.gen_range(2..=max_dims[0]), rng.gen_range(2..=max_dims[1]), rng.gen_range(1..=max_dims[2])];
    let mut grid = GridMap::new(dims).unwrap();
    let density = rng.gen_range(0.0..0.3);
    for _ in 0..(density * grid.volume() as f64) as usize {
        let v = random_voxel(&mut rng, dims);
        grid.add_obstacle(v).unwrap();
    }
    // walls across a random axis, mostly solid, sometimes with a single gap
    for _ in 0..rng.gen_range(0..=max_walls) {
        let axis = rng.gen_range(0..3);
        if dims[axis] < 3 {
            continue;
        }
        let at = rng.gen_range(1..dims[axis] - 1);
        let fill = rng.gen_range(0.85..1.0);
        for i in 0..grid.volume() {
            let v = grid.voxel_at(i);
            let c = [v.x, v.y, v.z];
            if c[axis] == at && rng.gen_bool(fill) {
                grid.add_obstacle(v).unwrap();
            }
        }
    }
    let free: Vec<Voxel> = (0..grid.volume()).map(|i| grid.voxel_at(i)).filter(|&v| !grid.blocked_at(v)).collect();
    let (start, goal) = if free.len() >= 2 {
        let a = free[rng.gen_range(0..free.len())];
        let mut b = free[rng.gen_range(0..free.len())];
        while b == a {
            b = free[rng.gen_range(0..free.len())];
        }
        (a, b)
    } else {
        grid = GridMap::new(dims).unwrap();
        (Voxel::new(0, 0, 0), Voxel::new(dims[0] - 1, dims[1] - 1, dims[2] - 1))
    };
    let nfzs = (0..rng.gen_range(0..=max_nfzs))
        .map(|_| {
            let a = random_voxel(&mut rng, dims);
            let b = random_voxel(&mut rng, dims);
            let min = Voxel::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z));
            let max = Voxel::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z));
            let t_start = rng.gen_range(0.0..15.0);
            let t_end = if rng.gen_bool(0.2) {
                f64::INFINITY
            } else {
                t_start + rng.gen_range(0.5..15.0)
            };
            NoFlyZone {
                region: NfzRegion::Box { min, max },
                t_start,
                t_end,
            }
        })
        .collect();
    World {
        grid,
        nfzs,
        start,
        goal,
        speed: rng.gen_range(1.0..5.0),
        t0: rng.gen_range(0.0..5.0),
    }
}
