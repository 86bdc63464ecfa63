//! Single-agent 4D planner over (voxel, safe interval) states.
//!
//! Nodes are ordered by soft-conflict count first, then by `f = g + h`, then
//! by `h`, then by insertion order. A move from `v` to `v'` takes
//! `move_distance / speed` seconds; the agent occupies `v` until the midpoint
//! of the move and `v'` from then on, so the move is feasible only if `v` is
//! still safe at the midpoint and `v'` is already safe there. Any delay
//! needed to meet that condition is spent hovering at `v` before departure.
//!
//! Each safe interval is further cut where hovering at the voxel would start
//! or stop conflicting with another agent. The search state is the voxel and
//! one of these pieces, so a move may target a later piece of a neighbor
//! (hovering in place meanwhile) when that neighbor is about to clear.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::geometry::{MotionSegment, SoftIndex};
use crate::grid::{euclidean, octile3, step_length, GridMap, Voxel, NEIGHBOR_OFFSETS};
use crate::sfi::{SafeInterval, SfiTable};
use crate::trajectory::{Leg, UavId, Waypoint};

/// Clearance kept between an occupancy switch and an interval boundary, so
/// that floating-point sampling of the switch never lands on the wrong side.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

/// One mission: a roundtrip from `hub` to `delivery` and back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavProfile {
    pub id: UavId,
    pub hub: Voxel,
    pub delivery: Voxel,
    pub t_init: f64,
    pub speed: f64,
    pub radius: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("{id}: {which} voxel {voxel} is outside the grid")]
    OutOfBounds {
        id: UavId,
        which: &'static str,
        voxel: Voxel,
    },
    #[error("{id}: {which} voxel {voxel} is a hard obstacle")]
    Blocked {
        id: UavId,
        which: &'static str,
        voxel: Voxel,
    },
    #[error("{id}: hub and delivery coincide at {voxel}")]
    SameEndpoints { id: UavId, voxel: Voxel },
    #[error("{id}: {field} must be positive and finite, got {value}")]
    NonPositive {
        id: UavId,
        field: &'static str,
        value: f64,
    },
}

impl UavProfile {
    pub fn validate(&self, grid: &GridMap) -> Result<(), ProfileError> {
        let id = self.id;
        for (which, voxel) in [("hub", self.hub), ("delivery", self.delivery)] {
            if !grid.in_bounds(voxel) {
                return Err(ProfileError::OutOfBounds { id, which, voxel });
            }
            if grid.blocked_at(voxel) {
                return Err(ProfileError::Blocked { id, which, voxel });
            }
        }
        if self.hub == self.delivery {
            return Err(ProfileError::SameEndpoints {
                id,
                voxel: self.hub,
            });
        }
        for (field, value) in [
            ("t_init", self.t_init),
            ("speed", self.speed),
            ("radius", self.radius),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ProfileError::NonPositive { id, field, value });
            }
        }
        Ok(())
    }
}

/// Componentwise sign of a displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DirectionSector {
    pub sx: i8,
    pub sy: i8,
    pub sz: i8,
}

fn sign(a: u32, b: u32) -> i8 {
    match b.cmp(&a) {
        Ordering::Less => -1,
        Ordering::Equal => 0,
        Ordering::Greater => 1,
    }
}

pub fn direction_sector(from: Voxel, to: Voxel) -> DirectionSector {
    DirectionSector {
        sx: sign(from.x, to.x),
        sy: sign(from.y, to.y),
        sz: sign(from.z, to.z),
    }
}

fn aligned(nb: DirectionSector, goal: DirectionSector) -> bool {
    (nb.sx == goal.sx && nb.sy == goal.sy)
        || (nb.sx == goal.sx && nb.sx != 0 && nb.sy == 0)
        || (nb.sy == goal.sy && nb.sy != 0 && nb.sx == 0)
        || (nb.sz == goal.sz && nb.sz != 0)
}

/// Bitmasks over `NEIGHBOR_OFFSETS`: all free neighbors, and the ones kept by
/// directional pruning (all free neighbors when nothing but waiting survives).
fn neighbor_masks(grid: &GridMap, loc: Voxel, goal: Voxel) -> (u32, u32) {
    let s_goal = direction_sector(loc, goal);
    let mut free = 0u32;
    let mut kept = 0u32;
    for (k, &(dx, dy, dz)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        let Some(n) = loc.offset(dx, dy, dz) else {
            continue;
        };
        if !grid.in_bounds(n) || grid.blocked_at(n) {
            continue;
        }
        free |= 1 << k;
        if n == goal || aligned(direction_sector(loc, n), s_goal) {
            kept |= 1 << k;
        }
    }
    if kept == 0 {
        kept = free;
    }
    (free, kept)
}

/// Neighbors worth expanding toward `goal`. The first entry is `loc` itself
/// (the wait action), followed by the kept neighbors in offset order.
pub fn pruned_neighbors(grid: &GridMap, loc: Voxel, goal: Voxel) -> Vec<Voxel> {
    let (_, kept) = neighbor_masks(grid, loc, goal);
    let mut out = vec![loc];
    out.extend(mask_voxels(loc, kept));
    out
}

fn mask_voxels(loc: Voxel, mask: u32) -> impl Iterator<Item = Voxel> {
    NEIGHBOR_OFFSETS
        .iter()
        .enumerate()
        .filter(move |(k, _)| mask & (1 << k) != 0)
        .filter_map(move |(_, &(dx, dy, dz))| loc.offset(dx, dy, dz))
}

/// Straight-line travel time between voxel centers.
pub fn heuristic(v: Voxel, goal: Voxel, speed: f64) -> f64 {
    euclidean(v, goal) / speed
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    /// Full 26-neighbor expansion.
    Off,
    /// Directional pruning; neighbors it drops stay reachable through a
    /// deferred open-list entry keyed by an admissible bound.
    #[default]
    Directional,
    /// Directional pruning with dropped neighbors discarded outright.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictMode {
    /// Conflicts with other agents are counted and minimized.
    #[default]
    Soft,
    /// Any move conflicting with another agent is rejected.
    Hard,
}

#[derive(Clone, Debug, Default)]
pub struct PlannerConfig {
    pub pruning: Pruning,
    pub conflicts: ConflictMode,
    pub deadline: Option<Instant>,
    /// Agent whose own entries in the soft index are ignored.
    pub exclude: Option<UavId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegRequest {
    pub start: Voxel,
    pub goal: Voxel,
    pub depart_not_before: f64,
    /// Seconds spent hovering at the goal after arrival; conflicts during
    /// the hover are charged to the arrival.
    pub hold_at_goal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedLeg {
    pub tuples: Leg,
    /// Soft-conflict cost of the returned leg.
    pub conflicts: u32,
}

impl PlannedLeg {
    pub fn arrival(&self) -> f64 {
        self.tuples.last().map_or(0.0, |w| w.t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Open-list pops of live nodes and of deferred neighbor sets.
    pub expansions: u64,
    /// Of those, pops of deferred neighbor sets.
    pub deferred_pops: u64,
    /// Stale heap entries of nodes dominated after insertion; skipped and
    /// not counted as expansions.
    pub dead_pops: u64,
    /// Nodes that survived the dominance check on insertion.
    pub generated: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanFailure {
    #[error("endpoint {0} is outside the grid or blocked")]
    InvalidEndpoint(Voxel),
    #[error("no safe interval at {voxel} at or after t={t}")]
    NoStartInterval { voxel: Voxel, t: f64 },
    #[error("open list exhausted")]
    Exhausted,
    #[error("deadline reached during search")]
    Timeout,
    #[error("broken parent chain at node {0}")]
    BrokenChain(usize),
}

/// A generated search state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchNode {
    pub v: Voxel,
    /// Safe interval of `v` containing `g`.
    pub interval: SafeInterval,
    /// Index of the piece of `v`'s cut intervals containing `g`.
    pub interval_id: u32,
    /// Arrival time at `v`.
    pub g: f64,
    pub h: f64,
    pub c: u32,
    pub parent: Option<usize>,
    /// Time the agent left the parent voxel; equals the parent's `g` unless
    /// it hovered first.
    pub depart: f64,
}

impl SearchNode {
    pub fn f(&self) -> f64 {
        self.g + self.h
    }
}

/// Chronological waypoints from the root to `nodes[idx]`. Hovering before a
/// move shows up as an extra waypoint at the predecessor voxel.
pub fn backtrack_path(nodes: &[SearchNode], idx: usize) -> Result<Leg, PlanFailure> {
    let mut chain = Vec::new();
    let mut cur = Some(idx);
    while let Some(i) = cur {
        let node = nodes.get(i).ok_or(PlanFailure::BrokenChain(i))?;
        if chain.len() > nodes.len() {
            return Err(PlanFailure::BrokenChain(i));
        }
        chain.push(i);
        cur = node.parent;
    }
    chain.reverse();
    let mut leg: Leg = Vec::with_capacity(chain.len() * 2);
    for (k, &i) in chain.iter().enumerate() {
        let node = nodes[i];
        if k > 0 {
            let prev = nodes[chain[k - 1]];
            if node.v != prev.v && node.depart > prev.g {
                leg.push(Waypoint::new(prev.v, node.depart));
            }
        }
        leg.push(Waypoint::new(node.v, node.g));
    }
    Ok(leg)
}

#[derive(Clone, Copy, Debug)]
struct OpenEntry {
    c: u32,
    f: f64,
    h: f64,
    seq: u64,
    node: u32,
    /// Neighbor bits still to expand from a deferred entry; 0 for a node.
    deferred: u32,
}

impl OpenEntry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.c
            .cmp(&other.c)
            .then(self.f.total_cmp(&other.f))
            .then(self.h.total_cmp(&other.h))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // reversed so the max-heap pops the smallest key
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    span: SafeInterval,
    hard: SafeInterval,
}

/// Per-voxel search data: the cut intervals and the windows in which
/// hovering there conflicts with each other agent.
struct VoxelInfo {
    pieces: Vec<Piece>,
    contacts: Vec<(UavId, f64, f64)>,
}

impl VoxelInfo {
    /// Adds the agents a hover over `[a, b]` conflicts with.
    fn hover_agents(&self, a: f64, b: f64, found: &mut SmallVec<[UavId; 4]>) {
        let end = self.contacts.partition_point(|w| w.1 <= b);
        for &(u, w0, w1) in &self.contacts[..end] {
            if w1 >= a && w0 <= b && !found.contains(&u) {
                found.push(u);
            }
        }
    }
}

/// Cuts every interval at the edges of the conflict windows falling inside it.
fn cut_intervals(intervals: &[SafeInterval], windows: &[(f64, f64)]) -> Vec<Piece> {
    let mut out = Vec::with_capacity(intervals.len() + 2 * windows.len());
    for &hard in intervals {
        let mut start = hard.start;
        for &(a, b) in windows {
            for edge in [a, b] {
                if edge > start && edge < hard.end {
                    out.push(Piece {
                        span: SafeInterval { start, end: edge },
                        hard,
                    });
                    start = edge;
                }
            }
        }
        out.push(Piece {
            span: SafeInterval {
                start,
                end: hard.end,
            },
            hard,
        });
    }
    out
}

struct Search<'a> {
    grid: &'a GridMap,
    table: &'a SfiTable,
    speed: f64,
    radius: f64,
    goal: Voxel,
    hold: f64,
    soft: &'a SoftIndex,
    config: &'a PlannerConfig,
    voxels: HashMap<usize, Rc<VoxelInfo>>,
    nodes: Vec<SearchNode>,
    dead: Vec<bool>,
    by_state: HashMap<u64, SmallVec<[u32; 2]>>,
    open: BinaryHeap<OpenEntry>,
    seq: u64,
}

impl<'a> Search<'a> {
    fn voxel(&mut self, v: Voxel) -> Rc<VoxelInfo> {
        let key = self.grid.index(v);
        if let Some(p) = self.voxels.get(&key) {
            return p.clone();
        }
        let intervals = self.table.intervals(v);
        let contacts = if self.soft.is_empty() || intervals.is_empty() {
            Vec::new()
        } else {
            self.soft.hover_contacts(v.center(), self.radius, self.config.exclude)
        };
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for &(_, a, b) in &contacts {
            match windows.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => windows.push((a, b)),
            }
        }
        let info = Rc::new(VoxelInfo {
            pieces: cut_intervals(intervals, &windows),
            contacts,
        });
        self.voxels.insert(key, info.clone());
        info
    }

    fn push_entry(&mut self, c: u32, f: f64, h: f64, node: u32, deferred: u32) {
        self.seq += 1;
        self.open.push(OpenEntry {
            c,
            f,
            h,
            seq: self.seq,
            node,
            deferred,
        });
    }

    fn insert(&mut self, node: SearchNode) {
        let key = ((self.grid.index(node.v) as u64) << 24) | node.interval_id as u64;
        let list = self.by_state.entry(key).or_default();
        if list.iter().any(|&i| {
            let o = &self.nodes[i as usize];
            o.c <= node.c && o.g <= node.g
        }) {
            return;
        }
        let nodes = &self.nodes;
        let dead = &mut self.dead;
        list.retain(|i| {
            let o = &nodes[*i as usize];
            let dominated = node.c <= o.c && node.g <= o.g;
            if dominated {
                dead[*i as usize] = true;
            }
            !dominated
        });
        let idx = self.nodes.len() as u32;
        list.push(idx);
        self.nodes.push(node);
        self.dead.push(false);
        self.push_entry(node.c, node.f(), node.h, idx, 0);
    }

    fn expand_into(&mut self, parent: u32, nb: Voxel) {
        let n = self.nodes[parent as usize];
        let delta = step_length(n.v, nb) / self.speed;
        let half = 0.5 * delta;
        let h = heuristic(nb, self.goal, self.speed);
        let info = self.voxel(nb);
        // hovers are checked against the cached windows; only the move
        // itself goes through the index
        let here = if self.soft.is_empty() { None } else { Some(self.voxel(n.v)) };
        for (j, piece) in info.pieces.iter().enumerate() {
            let iv = &piece.span;
            let t = (n.g + delta).max(iv.start + half + BOUNDARY_MARGIN);
            if t - half + BOUNDARY_MARGIN > n.interval.end {
                break;
            }
            if t >= iv.end {
                continue;
            }
            let depart = t - delta;
            let added = match &here {
                None => 0,
                Some(here) => {
                    let to = MotionSegment::new(n.v.center(), nb.center(), depart, t);
                    let mut found = self.soft.conflicting_agents(&[to], self.radius, self.config.exclude);
                    if depart > n.g {
                        here.hover_agents(n.g, depart, &mut found);
                    }
                    if nb == self.goal && self.hold > 0.0 {
                        info.hover_agents(t, t + self.hold, &mut found);
                    }
                    found.len() as u32
                }
            };
            if added > 0 && self.config.conflicts == ConflictMode::Hard {
                continue;
            }
            self.insert(SearchNode {
                v: nb,
                interval: piece.hard,
                interval_id: j as u32,
                g: t,
                h,
                c: n.c + added,
                parent: Some(parent as usize),
                depart,
            });
        }
    }

    fn expand_mask(&mut self, idx: u32, mask: u32) {
        let v = self.nodes[idx as usize].v;
        for nb in mask_voxels(v, mask) {
            self.expand_into(idx, nb);
        }
    }
}

fn start_search<'a>(
    grid: &'a GridMap,
    table: &'a SfiTable,
    profile: &UavProfile,
    req: &LegRequest,
    soft: &'a SoftIndex,
    config: &'a PlannerConfig,
) -> Result<Search<'a>, PlanFailure> {
    for v in [req.start, req.goal] {
        if !grid.in_bounds(v) || grid.blocked_at(v) {
            return Err(PlanFailure::InvalidEndpoint(v));
        }
    }
    let (iid, i0) = table
        .first_safe_interval(req.start, req.depart_not_before)
        .ok_or(PlanFailure::NoStartInterval {
            voxel: req.start,
            t: req.depart_not_before,
        })?;
    let t_s = req.depart_not_before.max(i0.start);
    let mut search = Search {
        grid,
        table,
        speed: profile.speed,
        radius: profile.radius,
        goal: req.goal,
        hold: req.hold_at_goal,
        soft,
        config,
        voxels: HashMap::default(),
        nodes: Vec::new(),
        dead: Vec::new(),
        by_state: HashMap::default(),
        open: BinaryHeap::new(),
        seq: 0,
    };
    let root = search.voxel(req.start);
    let piece_id = root
        .pieces
        .iter()
        .position(|p| p.hard == i0 && p.span.contains(t_s))
        .unwrap_or(iid);
    search.insert(SearchNode {
        v: req.start,
        interval: i0,
        interval_id: piece_id as u32,
        g: t_s,
        h: heuristic(req.start, req.goal, profile.speed),
        c: 0,
        parent: None,
        depart: t_s,
    });

    Ok(search)
}

/// Plans one leg from `req.start` to `req.goal`.
///
/// Among all returnable legs the result has the fewest soft conflicts and,
/// among those, the earliest arrival.
pub fn plan(
    grid: &GridMap,
    table: &SfiTable,
    profile: &UavProfile,
    req: &LegRequest,
    soft: &SoftIndex,
    config: &PlannerConfig,
    stats: &mut SearchStats,
) -> Result<PlannedLeg, PlanFailure> {
    let mut search = start_search(grid, table, profile, req, soft, config)?;
    let result = next_goal(&mut search, req, config, stats, u64::MAX)
        .and_then(|idx| leg_at(&search, idx));
    stats.generated += search.nodes.len() as u64;
    result
}

/// Up to `limit` goal arrivals in the order the search reaches them: the
/// best leg first, then legs that arrive in other goal pieces or trade a
/// later arrival for fewer conflicts. Stops early once `pop_budget` further
/// pops past the first arrival yield nothing new.
#[allow(clippy::too_many_arguments)]
pub fn plan_alternatives(
    grid: &GridMap,
    table: &SfiTable,
    profile: &UavProfile,
    req: &LegRequest,
    soft: &SoftIndex,
    config: &PlannerConfig,
    stats: &mut SearchStats,
    limit: usize,
    pop_budget: u64,
) -> Result<Vec<PlannedLeg>, PlanFailure> {
    let mut search = start_search(grid, table, profile, req, soft, config)?;
    let mut legs = Vec::new();
    let mut budget = u64::MAX;
    while legs.len() < limit {
        match next_goal(&mut search, req, config, stats, budget) {
            Ok(idx) => legs.push(leg_at(&search, idx)?),
            Err(e) if legs.is_empty() => {
                stats.generated += search.nodes.len() as u64;
                return Err(e);
            }
            Err(_) => break,
        }
        budget = pop_budget;
    }
    stats.generated += search.nodes.len() as u64;
    Ok(legs)
}

fn leg_at(search: &Search, idx: u32) -> Result<PlannedLeg, PlanFailure> {
    Ok(PlannedLeg {
        tuples: backtrack_path(&search.nodes, idx as usize)?,
        conflicts: search.nodes[idx as usize].c,
    })
}

/// Pops until a goal node comes off the open list and returns its index.
/// The goal node is not expanded, so calling again continues the search
/// toward the next arrival. Gives up after `budget` pops.
fn next_goal(
    search: &mut Search,
    req: &LegRequest,
    config: &PlannerConfig,
    stats: &mut SearchStats,
    budget: u64,
) -> Result<u32, PlanFailure> {
    let grid = search.grid;
    let pops_before = stats.expansions;
    let mut pops = 0u64;
    while let Some(entry) = search.open.pop() {
        pops += 1;
        if pops > budget {
            return Err(PlanFailure::Exhausted);
        }
        if pops.is_multiple_of(1024) {
            if let Some(deadline) = config.deadline {
                if Instant::now() >= deadline {
                    return Err(PlanFailure::Timeout);
                }
            }
        }
        let idx = entry.node;
        if search.dead[idx as usize] {
            stats.dead_pops += 1;
            continue;
        }
        stats.expansions += 1;
        if entry.deferred != 0 {
            stats.deferred_pops += 1;
            search.expand_mask(idx, entry.deferred);
            continue;
        }
        let n = search.nodes[idx as usize];
        if n.v == req.goal {
            log::trace!(
                "{} -> {}: c={} arrival {:.3} after {} pops, {} nodes",
                req.start,
                req.goal,
                n.c,
                n.g,
                stats.expansions - pops_before,
                search.nodes.len()
            );
            return Ok(idx);
        }
        let (free, kept) = neighbor_masks(grid, n.v, req.goal);
        let mask = match config.pruning {
            Pruning::Off => free,
            Pruning::Directional | Pruning::Literal => kept,
        };
        search.expand_mask(idx, mask);
        let rest = free & !mask;
        if config.pruning == Pruning::Directional && rest != 0 {
            let bound = mask_voxels(n.v, rest)
                .map(|nb| (step_length(n.v, nb) + octile3(nb, req.goal)) / search.speed)
                .fold(f64::INFINITY, f64::min);
            search.push_entry(n.c, n.g + bound, bound, idx, rest);
        }
    }
    Err(PlanFailure::Exhausted)
}
