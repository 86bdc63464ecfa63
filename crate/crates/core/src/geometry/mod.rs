//! Continuous-time narrow phase for constant-velocity spherical agents,
//! conflict classification and collision-graph construction.

mod index;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Trajectory, UavId, Waypoint};

pub use index::SoftIndex;

/// Default cone half-angle used to tell pursuit and head-on conflicts apart.
pub const DEFAULT_CONE_HALF_ANGLE_DEG: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("segments do not conflict (separation {separation} > {threshold})")]
    NotInConflict { separation: f64, threshold: f64 },
}

/// Straight constant-velocity motion from `from` at `t0` to `to` at `t1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionSegment {
    pub from: [f64; 3],
    pub to: [f64; 3],
    pub t0: f64,
    pub t1: f64,
}

impl MotionSegment {
    pub fn new(from: [f64; 3], to: [f64; 3], t0: f64, t1: f64) -> Self {
        debug_assert!(t0 <= t1);
        Self { from, to, t0, t1 }
    }

    pub fn between(a: Waypoint, b: Waypoint) -> Self {
        Self::new(a.voxel.center(), b.voxel.center(), a.t, b.t)
    }

    pub fn velocity(&self) -> [f64; 3] {
        let dt = self.t1 - self.t0;
        if dt <= 0.0 {
            return [0.0; 3];
        }
        std::array::from_fn(|k| (self.to[k] - self.from[k]) / dt)
    }

    /// Position at `t`, clamped to the endpoints outside `[t0, t1]`.
    pub fn position(&self, t: f64) -> [f64; 3] {
        let dt = self.t1 - self.t0;
        if dt <= 0.0 {
            return self.from;
        }
        let s = ((t - self.t0) / dt).clamp(0.0, 1.0);
        std::array::from_fn(|k| self.from[k] + s * (self.to[k] - self.from[k]))
    }

    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        (
            std::array::from_fn(|k| self.from[k].min(self.to[k])),
            std::array::from_fn(|k| self.from[k].max(self.to[k])),
        )
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Minimum distance between two moving points over their common time window
/// and the instant it is attained, or `None` when the windows are disjoint.
pub fn min_separation(a: &MotionSegment, b: &MotionSegment) -> Option<(f64, f64)> {
    let lo = a.t0.max(b.t0);
    let hi = a.t1.min(b.t1);
    if lo > hi {
        return None;
    }
    let pa = a.position(lo);
    let pb = b.position(lo);
    let d0: [f64; 3] = std::array::from_fn(|k| pa[k] - pb[k]);
    let va = a.velocity();
    let vb = b.velocity();
    let w: [f64; 3] = std::array::from_fn(|k| va[k] - vb[k]);
    let ww = dot(w, w);
    let tau = if ww > 0.0 {
        (-dot(d0, w) / ww).clamp(0.0, hi - lo)
    } else {
        0.0
    };
    let d: [f64; 3] = std::array::from_fn(|k| d0[k] + w[k] * tau);
    Some((dot(d, d).sqrt(), lo + tau))
}

/// True when the pair comes within `r_a + r_b + gamma` (tangency included).
pub fn segments_conflict(
    a: &MotionSegment,
    b: &MotionSegment,
    r_a: f64,
    r_b: f64,
    gamma: f64,
) -> bool {
    min_separation(a, b).is_some_and(|(d, _)| d <= r_a + r_b + gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Pursuit,
    HeadOn,
    Intersection,
}

/// Classifies a conflicting pair by the angle between its headings.
///
/// Hovering agents have no heading; such conflicts are reported as
/// intersections.
pub fn classify_conflict(
    a: &MotionSegment,
    b: &MotionSegment,
    threshold: f64,
    cone_half_angle_deg: f64,
) -> Result<ConflictKind, GeometryError> {
    let separation = min_separation(a, b).map_or(f64::INFINITY, |(d, _)| d);
    if separation > threshold {
        return Err(GeometryError::NotInConflict {
            separation,
            threshold,
        });
    }
    Ok(kind_of(a, b, cone_half_angle_deg))
}

fn kind_of(a: &MotionSegment, b: &MotionSegment, cone_half_angle_deg: f64) -> ConflictKind {
    let va = a.velocity();
    let vb = b.velocity();
    let na = dot(va, va).sqrt();
    let nb = dot(vb, vb).sqrt();
    if na == 0.0 || nb == 0.0 {
        return ConflictKind::Intersection;
    }
    let cos = dot(va, vb) / (na * nb);
    let cone = cone_half_angle_deg.to_radians().cos();
    if cos < -cone {
        ConflictKind::HeadOn
    } else if cos > cone {
        ConflictKind::Pursuit
    } else {
        ConflictKind::Intersection
    }
}

/// Sub-window of `[seg.t0, seg.t1]` during which the moving point is within
/// `reach` of the fixed `point` (boundary included).
pub fn proximity_window(seg: &MotionSegment, point: [f64; 3], reach: f64) -> Option<(f64, f64)> {
    let d0: [f64; 3] = std::array::from_fn(|k| seg.from[k] - point[k]);
    let v = seg.velocity();
    let a = dot(v, v);
    let b = dot(d0, v);
    let c = dot(d0, d0) - reach * reach;
    let span = seg.t1 - seg.t0;
    if a == 0.0 {
        return (c <= 0.0).then_some((seg.t0, seg.t1));
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let lo = ((-b - root) / a).max(0.0);
    let hi = ((-b + root) / a).min(span);
    (lo <= hi).then_some((seg.t0 + lo, seg.t0 + hi))
}

/// Number of distinct agents in `soft_paths` with a segment conflicting
/// with `mv`. Linear scan; the planner uses [`SoftIndex`] instead.
pub fn geo_conflict(mv: &MotionSegment, radius: f64, gamma: f64, soft_paths: &[Trajectory]) -> usize {
    soft_paths
        .iter()
        .filter(|p| {
            p.segments()
                .any(|s| segments_conflict(mv, &s, radius, p.radius, gamma))
        })
        .count()
}

/// Earliest conflict between two agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub uav_a: UavId,
    pub uav_b: UavId,
    pub time: f64,
    pub separation: f64,
    pub kind: ConflictKind,
}

/// Agents as vertices, separation violations as edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionGraph {
    pub vertices: Vec<UavId>,
    pub edges: BTreeMap<(UavId, UavId), ConflictRecord>,
}

impl CollisionGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> BTreeMap<UavId, Vec<UavId>> {
        let mut adj: BTreeMap<UavId, Vec<UavId>> = BTreeMap::new();
        for &(a, b) in self.edges.keys() {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        adj
    }

    /// Vertices with at least one conflict, ascending.
    pub fn conflicted(&self) -> Vec<UavId> {
        let set: BTreeSet<UavId> = self.edges.keys().flat_map(|&(a, b)| [a, b]).collect();
        set.into_iter().collect()
    }

    /// Connected component containing `v`, ascending.
    pub fn component(&self, v: UavId) -> Vec<UavId> {
        let adj = self.adjacency();
        let mut seen = BTreeSet::from([v]);
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &n in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.into_iter().collect()
    }
}

fn ordered(a: UavId, b: UavId) -> (UavId, UavId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Candidate conflict between segment `sa` of path `pa` and `sb` of `pb`.
struct Hit {
    time: f64,
    separation: f64,
    seg_a: usize,
    seg_b: usize,
    kind: ConflictKind,
}

fn check_pair(
    pa: &Trajectory,
    sa: usize,
    seg_a: &MotionSegment,
    pb: &Trajectory,
    sb: usize,
    seg_b: &MotionSegment,
    gamma: f64,
) -> Option<Hit> {
    let (d, t) = min_separation(seg_a, seg_b)?;
    (d <= pa.radius + pb.radius + gamma).then(|| Hit {
        time: t,
        separation: d,
        seg_a: sa,
        seg_b: sb,
        kind: kind_of(seg_a, seg_b, DEFAULT_CONE_HALF_ANGLE_DEG),
    })
}

fn keep_earliest(best: &mut Option<Hit>, hit: Hit) {
    let better = match best {
        None => true,
        Some(b) => (hit.time, hit.seg_a, hit.seg_b) < (b.time, b.seg_a, b.seg_b),
    };
    if better {
        *best = Some(hit);
    }
}

fn into_graph(paths: &[Trajectory], hits: BTreeMap<(usize, usize), Hit>) -> CollisionGraph {
    let mut vertices: Vec<UavId> = paths.iter().map(|p| p.uav).collect();
    vertices.sort_unstable();
    let edges = hits
        .into_iter()
        .map(|((i, j), h)| {
            let key = ordered(paths[i].uav, paths[j].uav);
            let record = ConflictRecord {
                uav_a: key.0,
                uav_b: key.1,
                time: h.time,
                separation: h.separation,
                kind: h.kind,
            };
            (key, record)
        })
        .collect();
    CollisionGraph { vertices, edges }
}

/// Oracle: every pair of paths, every pair of segments.
pub fn count_conflicts_exhaustive(paths: &[Trajectory], gamma: f64) -> CollisionGraph {
    let segs: Vec<Vec<MotionSegment>> = paths.iter().map(|p| p.segments().collect()).collect();
    let mut hits = BTreeMap::new();
    for i in 0..paths.len() {
        for j in (i + 1)..paths.len() {
            let (i, j) = if paths[i].uav < paths[j].uav { (i, j) } else { (j, i) };
            let mut best = None;
            for (sa, a) in segs[i].iter().enumerate() {
                for (sb, b) in segs[j].iter().enumerate() {
                    if let Some(h) = check_pair(&paths[i], sa, a, &paths[j], sb, b, gamma) {
                        keep_earliest(&mut best, h);
                    }
                }
            }
            if let Some(h) = best {
                hits.insert((i, j), h);
            }
        }
    }
    into_graph(paths, hits)
}

const BROAD_CELL: f64 = 4.0;
const BROAD_SECONDS: f64 = 4.0;

/// Collision graph of a path set using a voxel-time hash broad phase.
pub fn count_conflicts(paths: &[Trajectory], gamma: f64) -> CollisionGraph {
    let segs: Vec<Vec<MotionSegment>> = paths.iter().map(|p| p.segments().collect()).collect();
    let mut buckets: HashMap<[i64; 4], Vec<(u32, u32)>> = HashMap::new();
    for (pi, (path, list)) in paths.iter().zip(&segs).enumerate() {
        let pad = path.radius + gamma / 2.0;
        for (si, s) in list.iter().enumerate() {
            let (lo, hi) = s.aabb();
            let cell = |x: f64| (x / BROAD_CELL).floor() as i64;
            let (t0, t1) = (
                (s.t0 / BROAD_SECONDS).floor() as i64,
                (s.t1 / BROAD_SECONDS).floor() as i64,
            );
            for cx in cell(lo[0] - pad)..=cell(hi[0] + pad) {
                for cy in cell(lo[1] - pad)..=cell(hi[1] + pad) {
                    for cz in cell(lo[2] - pad)..=cell(hi[2] + pad) {
                        for ct in t0..=t1 {
                            buckets
                                .entry([cx, cy, cz, ct])
                                .or_default()
                                .push((pi as u32, si as u32));
                        }
                    }
                }
            }
        }
    }

    let mut tested: HashSet<(u32, u32, u32, u32)> = HashSet::new();
    let mut best: BTreeMap<(usize, usize), Option<Hit>> = BTreeMap::new();
    for entries in buckets.values() {
        for (x, &(pa, sa)) in entries.iter().enumerate() {
            for &(pb, sb) in &entries[x + 1..] {
                if pa == pb {
                    continue;
                }
                let (pa, sa, pb, sb) = if paths[pa as usize].uav < paths[pb as usize].uav {
                    (pa, sa, pb, sb)
                } else {
                    (pb, sb, pa, sa)
                };
                if !tested.insert((pa, sa, pb, sb)) {
                    continue;
                }
                let (i, j) = (pa as usize, pb as usize);
                let (a, b) = (&segs[i][sa as usize], &segs[j][sb as usize]);
                if let Some(h) = check_pair(&paths[i], sa as usize, a, &paths[j], sb as usize, b, gamma) {
                    keep_earliest(best.entry((i, j)).or_default(), h);
                }
            }
        }
    }
    let hits = best.into_iter().filter_map(|(k, h)| h.map(|h| (k, h))).collect();
    into_graph(paths, hits)
}
