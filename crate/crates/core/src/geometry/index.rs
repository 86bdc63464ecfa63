use std::collections::BTreeMap;

use rustc_hash::FxHashMap as HashMap;

use smallvec::SmallVec;

use super::{proximity_window, segments_conflict, MotionSegment};
use crate::trajectory::{Trajectory, UavId};

const BUCKET_SECONDS: f64 = 2.0;
const CELL_METERS: f64 = 4.0;

type Cell = [i64; 3];

#[derive(Clone, Debug)]
struct Entry {
    uav: UavId,
    lo: [f64; 3],
    hi: [f64; 3],
}

#[derive(Clone, Debug)]
struct IndexedPath {
    radius: f64,
    segments: Vec<MotionSegment>,
    first_bucket: i64,
    last_bucket: i64,
}

/// Time-bucketed set of trajectories answering "which agents would a motion
/// conflict with" without scanning every segment.
///
/// Each bucket stores, per agent, the bounding box of that agent's motion
/// during the bucket inflated by its radius and the safety buffer.
#[derive(Clone, Debug)]
pub struct SoftIndex {
    gamma: f64,
    paths: BTreeMap<UavId, IndexedPath>,
    buckets: HashMap<i64, Vec<Entry>>,
    /// Spatial hash: every cell touched by an inflated segment box lists it.
    cells: HashMap<Cell, Vec<CellEntry>>,
}

#[derive(Clone, Copy, Debug)]
struct CellEntry {
    uav: UavId,
    segment: u32,
    /// Lowest cell of the inflated segment box, for deduplicating hits.
    first: Cell,
}

fn cell_of(p: [f64; 3]) -> Cell {
    p.map(|x| (x / CELL_METERS).floor() as i64)
}

fn cells_of(lo: [f64; 3], hi: [f64; 3]) -> impl Iterator<Item = Cell> {
    let a = cell_of(lo);
    let b = cell_of(hi);
    (a[0]..=b[0]).flat_map(move |x| (a[1]..=b[1]).flat_map(move |y| (a[2]..=b[2]).map(move |z| [x, y, z])))
}

fn bucket_of(t: f64) -> i64 {
    (t / BUCKET_SECONDS).floor() as i64
}

impl SoftIndex {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            paths: BTreeMap::new(),
            buckets: HashMap::default(),
            cells: HashMap::default(),
        }
    }

    pub fn from_paths<'a>(gamma: f64, paths: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut index = Self::new(gamma);
        for p in paths {
            index.insert(p);
        }
        index
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn contains(&self, uav: UavId) -> bool {
        self.paths.contains_key(&uav)
    }

    /// Adds or replaces the trajectory of `path.uav`.
    pub fn insert(&mut self, path: &Trajectory) {
        self.remove(path.uav);
        let segments: Vec<MotionSegment> = path.segments().collect();
        if segments.is_empty() {
            return;
        }
        let pad = path.radius + self.gamma;
        let first_bucket = bucket_of(segments[0].t0);
        let last_bucket = bucket_of(segments[segments.len() - 1].t1);
        let mut boxes: BTreeMap<i64, ([f64; 3], [f64; 3])> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            let (lo, hi) = s.aabb();
            let padded = lo.map(|x| x - pad);
            let entry = CellEntry {
                uav: path.uav,
                segment: i as u32,
                first: cell_of(padded),
            };
            for c in cells_of(padded, hi.map(|x| x + pad)) {
                self.cells.entry(c).or_default().push(entry);
            }
            for b in bucket_of(s.t0)..=bucket_of(s.t1) {
                let slot = boxes.entry(b).or_insert((lo, hi));
                for k in 0..3 {
                    slot.0[k] = slot.0[k].min(lo[k]);
                    slot.1[k] = slot.1[k].max(hi[k]);
                }
            }
        }
        for (b, (lo, hi)) in boxes {
            self.buckets.entry(b).or_default().push(Entry {
                uav: path.uav,
                lo: lo.map(|x| x - pad),
                hi: hi.map(|x| x + pad),
            });
        }
        self.paths.insert(
            path.uav,
            IndexedPath {
                radius: path.radius,
                segments,
                first_bucket,
                last_bucket,
            },
        );
    }

    pub fn remove(&mut self, uav: UavId) -> bool {
        let Some(p) = self.paths.remove(&uav) else {
            return false;
        };
        for b in p.first_bucket..=p.last_bucket {
            if let Some(list) = self.buckets.get_mut(&b) {
                list.retain(|e| e.uav != uav);
                if list.is_empty() {
                    self.buckets.remove(&b);
                }
            }
        }
        let pad = p.radius + self.gamma;
        for s in &p.segments {
            let (lo, hi) = s.aabb();
            for c in cells_of(lo.map(|x| x - pad), hi.map(|x| x + pad)) {
                if let Some(list) = self.cells.get_mut(&c) {
                    list.retain(|e| e.uav != uav);
                    if list.is_empty() {
                        self.cells.remove(&c);
                    }
                }
            }
        }
        true
    }

    fn agent_conflicts(&self, uav: UavId, mv: &MotionSegment, radius: f64) -> bool {
        let p = &self.paths[&uav];
        let start = p.segments.partition_point(|s| s.t1 < mv.t0);
        p.segments[start..]
            .iter()
            .take_while(|s| s.t0 <= mv.t1)
            .any(|s| segments_conflict(mv, s, radius, p.radius, self.gamma))
    }

    /// Distinct agents (other than `exclude`) conflicting with any of `motion`
    /// for an agent of the given radius, in ascending id order.
    pub fn conflicting_agents(
        &self,
        motion: &[MotionSegment],
        radius: f64,
        exclude: Option<UavId>,
    ) -> SmallVec<[UavId; 4]> {
        let mut found: SmallVec<[UavId; 4]> = SmallVec::new();
        for mv in motion {
            let (lo, hi) = mv.aabb();
            for b in bucket_of(mv.t0)..=bucket_of(mv.t1) {
                let Some(entries) = self.buckets.get(&b) else {
                    continue;
                };
                for e in entries {
                    if Some(e.uav) == exclude || found.contains(&e.uav) {
                        continue;
                    }
                    let overlaps = (0..3).all(|k| lo[k] - radius <= e.hi[k] && hi[k] + radius >= e.lo[k]);
                    if overlaps && self.agent_conflicts(e.uav, mv, radius) {
                        found.push(e.uav);
                    }
                }
            }
        }
        found.sort_unstable();
        found
    }

    pub fn count_conflicts(&self, motion: &[MotionSegment], radius: f64, exclude: Option<UavId>) -> usize {
        self.conflicting_agents(motion, radius, exclude).len()
    }

    /// Sorted, merged time windows during which an agent of `radius` hovering
    /// at `point` would conflict with some indexed agent other than `exclude`.
    pub fn hover_windows(&self, point: [f64; 3], radius: f64, exclude: Option<UavId>) -> Vec<(f64, f64)> {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (_, a, b) in self.hover_contacts(point, radius, exclude) {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged
    }

    /// Closed time windows, one per conflicting segment, during which an agent
    /// of `radius` hovering at `point` would conflict with the listed agent.
    /// Sorted by window start.
    pub fn hover_contacts(&self, point: [f64; 3], radius: f64, exclude: Option<UavId>) -> Vec<(UavId, f64, f64)> {
        let q_lo = cell_of(point.map(|x| x - radius));
        let mut windows = Vec::new();
        let mut last: Option<(UavId, &IndexedPath)> = None;
        for c in cells_of(point.map(|x| x - radius), point.map(|x| x + radius)) {
            let Some(list) = self.cells.get(&c) else {
                continue;
            };
            for e in list {
                // a segment box overlapping several query cells is handled
                // only in the lowest of them
                let home: Cell = std::array::from_fn(|k| e.first[k].max(q_lo[k]));
                if home != c || Some(e.uav) == exclude {
                    continue;
                }
                let p = match last {
                    Some((u, p)) if u == e.uav => p,
                    _ => {
                        let p = &self.paths[&e.uav];
                        last = Some((e.uav, p));
                        p
                    }
                };
                if let Some((a, b)) = proximity_window(&p.segments[e.segment as usize], point, radius + p.radius + self.gamma) {
                    windows.push((e.uav, a, b));
                }
            }
        }
        windows.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        windows
    }
}
