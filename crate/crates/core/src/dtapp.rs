//! Fleet planning: urgency-ordered roundtrips followed by neighborhood
//! repair of the remaining inter-agent conflicts.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{count_conflicts, CollisionGraph, MotionSegment, SoftIndex};
use crate::grid::{step_length, GridMap, Voxel};
use crate::scenario::{Scenario, ScenarioError};
use crate::sfi::{NoFlyZone, SfiLayer, SfiTable};
use crate::sfippst::{
    plan, plan_alternatives, ConflictMode, LegRequest, PlanFailure, PlannedLeg, PlannerConfig,
    Pruning, SearchStats, UavProfile,
};
use crate::trajectory::{combine_round_trip, Trajectory, UavId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Safety buffer added to the sum of radii, meters.
    pub gamma: f64,
    /// Hover time at the delivery voxel, seconds.
    pub wait_duration: f64,
    pub neighborhood_size: usize,
    /// Wall-clock budget, seconds.
    pub time_limit: f64,
    pub seed: u64,
    pub pruning: Pruning,
    pub soft_mode: ConflictMode,
    /// Plan the initial pass against already-planned paths. When false the
    /// initial pass ignores other agents entirely.
    pub initial_pass_soft: bool,
    /// Optional cap on repair iterations.
    pub max_iterations: Option<u64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            wait_duration: 10.0,
            neighborhood_size: 10,
            time_limit: 300.0,
            seed: 0,
            pruning: Pruning::Directional,
            soft_mode: ConflictMode::Soft,
            initial_pass_soft: true,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("neighborhood size must be at least 2, got {0}")]
    Neighborhood(usize),
    #[error("time limit must be positive, got {0}")]
    TimeLimit(f64),
    #[error("gamma must be finite and non-negative, got {0}")]
    Gamma(f64),
    #[error("wait duration must be finite and non-negative, got {0}")]
    Wait(f64),
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.neighborhood_size < 2 {
            return Err(ParamsError::Neighborhood(self.neighborhood_size));
        }
        if !(self.time_limit > 0.0) {
            return Err(ParamsError::TimeLimit(self.time_limit));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ParamsError::Gamma(self.gamma));
        }
        if !(self.wait_duration >= 0.0 && self.wait_duration.is_finite()) {
            return Err(ParamsError::Wait(self.wait_duration));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Success,
    Failure,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// One path per planned agent, ascending by id.
    pub paths: Vec<Trajectory>,
    pub flowtime: f64,
    pub iterations: u64,
    /// Collision-graph edge count after the initial pass and after every
    /// repair iteration.
    pub conflict_history: Vec<usize>,
    pub wall_time: f64,
    pub expanded_nodes: u64,
    /// Breakdown of the planner work behind `expanded_nodes`.
    pub search: SearchStats,
    pub final_conflicts: usize,
    /// Agent whose planning failed, if any.
    pub failed_agent: Option<UavId>,
}

/// Sum of mission durations.
pub fn total_flowtime(paths: &[Trajectory]) -> f64 {
    paths.iter().map(Trajectory::duration).sum()
}

/// Ascending by start time; agents sharing a start time are shuffled.
pub fn sort_by_urgency<R: Rng + ?Sized>(uavs: &[UavProfile], rng: &mut R) -> Vec<UavProfile> {
    let mut out = uavs.to_vec();
    out.sort_by(|a, b| a.t_init.total_cmp(&b.t_init).then(a.id.cmp(&b.id)));
    let mut i = 0;
    while i < out.len() {
        let mut j = i + 1;
        while j < out.len() && out[j].t_init == out[i].t_init {
            j += 1;
        }
        out[i..j].shuffle(rng);
        i = j;
    }
    out
}

/// Shared planning context for one fleet.
struct Planner<'a> {
    grid: &'a GridMap,
    layer: Arc<SfiLayer>,
    params: &'a SolverParams,
    deadline: Option<Instant>,
    stats: SearchStats,
}

/// Extra outbound arrivals tried when the first one leaves no clean way back.
const ALTERNATIVE_ARRIVALS: usize = 6;
const ALTERNATIVE_MIN_POPS: u64 = 10_000;

type LegPair = (PlannedLeg, Result<PlannedLeg, PlanFailure>);

/// Total conflicts and return time of a roundtrip; a failed return leg
/// ranks last.
fn pair_cost((out, ret): &LegPair) -> (u32, f64) {
    match ret {
        Ok(r) => (out.conflicts + r.conflicts, r.arrival()),
        Err(_) => (u32::MAX, f64::INFINITY),
    }
}

impl Planner<'_> {
    fn round_trip(
        &mut self,
        profile: &UavProfile,
        soft: &SoftIndex,
        conflicts: ConflictMode,
    ) -> Result<Trajectory, PlanFailure> {
        let table = SfiTable::new(self.layer.clone(), &[profile.hub, profile.delivery]);
        let config = PlannerConfig {
            pruning: self.params.pruning,
            conflicts,
            deadline: self.deadline,
            exclude: Some(profile.id),
        };
        let wait = self.params.wait_duration;
        let outbound = LegRequest {
            start: profile.hub,
            goal: profile.delivery,
            depart_not_before: profile.t_init,
            hold_at_goal: wait,
        };
        let before = self.stats.expansions;
        let out = plan(self.grid, &table, profile, &outbound, soft, &config, &mut self.stats)?;
        let first_pops = self.stats.expansions - before;
        let ret = self.return_leg(profile, &table, &config, soft, out.arrival() + wait);
        let mut best: LegPair = (out, ret);
        let clean = matches!(&best.1, Ok(r) if r.conflicts == 0);
        if !clean {
            if let Err(e @ (PlanFailure::Timeout | PlanFailure::InvalidEndpoint(_))) = best.1 {
                return Err(e);
            }
            // The earliest good arrival left no good way home. Later arrivals
            // at the delivery voxel may, so try a few before settling.
            let alternatives = plan_alternatives(
                self.grid,
                &table,
                profile,
                &outbound,
                soft,
                &config,
                &mut self.stats,
                ALTERNATIVE_ARRIVALS,
                (2 * first_pops).max(ALTERNATIVE_MIN_POPS),
            )?;
            for alt in alternatives.into_iter().skip(1) {
                let ret = self.return_leg(profile, &table, &config, soft, alt.arrival() + wait);
                if let Err(PlanFailure::Timeout) = ret {
                    return Err(PlanFailure::Timeout);
                }
                let pair = (alt, ret);
                if pair_cost(&pair) < pair_cost(&best) {
                    best = pair;
                    if pair_cost(&best).0 == 0 {
                        break;
                    }
                }
            }
        }
        let (out, ret) = best;
        let ret = ret?;
        Ok(combine_round_trip(
            profile.id,
            profile.radius,
            &out.tuples,
            wait,
            &ret.tuples,
        ))
    }

    fn return_leg(
        &mut self,
        profile: &UavProfile,
        table: &SfiTable,
        config: &PlannerConfig,
        soft: &SoftIndex,
        depart: f64,
    ) -> Result<PlannedLeg, PlanFailure> {
        let req = LegRequest {
            start: profile.delivery,
            goal: profile.hub,
            depart_not_before: depart,
            hold_at_goal: 0.0,
        };
        plan(self.grid, table, profile, &req, soft, config, &mut self.stats)
    }
}

/// Plans one roundtrip: outbound leg, hover of `params.wait_duration` at the
/// delivery voxel, and the return leg, each avoiding `soft_paths` as far as
/// possible (or entirely, in hard mode).
pub fn plan_round_trip(
    profile: &UavProfile,
    grid: &GridMap,
    nfzs: &[NoFlyZone],
    soft_paths: &[Trajectory],
    params: &SolverParams,
) -> Result<Trajectory, DtappError> {
    let layer = Arc::new(SfiLayer::build(grid, nfzs).map_err(ScenarioError::from)?);
    let soft = SoftIndex::from_paths(
        params.gamma,
        soft_paths.iter().filter(|p| p.uav != profile.id),
    );
    let mut planner = Planner {
        grid,
        layer,
        params,
        deadline: None,
        stats: SearchStats::default(),
    };
    planner
        .round_trip(profile, &soft, params.soft_mode)
        .map_err(|source| DtappError::Plan {
            uav: profile.id,
            source,
        })
}

#[derive(Debug, Error)]
pub enum DtappError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{uav}: {source}")]
    Plan { uav: UavId, source: PlanFailure },
    #[error("collision graph has no edges")]
    NoConflicts,
}

const WALK_ATTEMPTS: usize = 20;
const WALK_LENGTH_FACTOR: usize = 10;

// Hover-only paths walk at 1 m/s.
fn path_speed(path: &Trajectory) -> f64 {
    let v = path
        .tuples
        .windows(2)
        .filter(|w| w[0].voxel != w[1].voxel && w[1].t > w[0].t)
        .map(|w| step_length(w[0].voxel, w[1].voxel) / (w[1].t - w[0].t))
        .fold(0.0, f64::max);
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

/// Replanning set for one repair iteration.
///
/// A conflicted agent is drawn uniformly and its connected component taken.
/// A component no larger than `n` is grown by random walks in space-time
/// from points on member paths, adding any agent whose safety envelope the
/// walk touches. A larger component is sampled by a random walk on the
/// collision graph.
pub fn conflict_neighborhood<R: Rng + ?Sized>(
    cg: &CollisionGraph,
    paths: &[Trajectory],
    n: usize,
    rng: &mut R,
    grid: &GridMap,
    gamma: f64,
) -> Result<Vec<UavId>, DtappError> {
    let index = SoftIndex::from_paths(gamma, paths);
    neighborhood_with_index(cg, paths, &index, n, rng, grid)
}

fn neighborhood_with_index<R: Rng + ?Sized>(
    cg: &CollisionGraph,
    paths: &[Trajectory],
    index: &SoftIndex,
    n: usize,
    rng: &mut R,
    grid: &GridMap,
) -> Result<Vec<UavId>, DtappError> {
    let conflicted = cg.conflicted();
    let Some(&seed) = conflicted.get(rng.gen_range(0..conflicted.len().max(1))) else {
        return Err(DtappError::NoConflicts);
    };
    let component = cg.component(seed);
    if component.len() > n {
        let adj = cg.adjacency();
        let mut set = vec![seed];
        let mut cur = seed;
        let cap = 100 * n * component.len();
        for _ in 0..cap {
            if set.len() >= n {
                break;
            }
            let next = adj[&cur][rng.gen_range(0..adj[&cur].len())];
            if !set.contains(&next) {
                set.push(next);
            }
            cur = next;
        }
        for v in component {
            if set.len() >= n {
                break;
            }
            if !set.contains(&v) {
                set.push(v);
            }
        }
        return Ok(set);
    }

    let by_id: BTreeMap<UavId, &Trajectory> = paths.iter().map(|p| (p.uav, p)).collect();
    let mut set = component;
    for _ in 0..WALK_ATTEMPTS {
        if set.len() >= n {
            break;
        }
        let a = set[rng.gen_range(0..set.len())];
        let Some(path) = by_id.get(&a).copied() else {
            continue;
        };
        if path.tuples.is_empty() {
            continue;
        }
        let speed = path_speed(path);
        let start = path.tuples[rng.gen_range(0..path.tuples.len())];
        let mut v = start.voxel;
        let mut t = start.t;
        let steps = WALK_LENGTH_FACTOR * path.tuples.len();
        for _ in 0..=steps {
            let c = v.center();
            let probe = MotionSegment::new(c, c, t, t);
            for b in index.conflicting_agents(&[probe], path.radius, Some(a)) {
                if set.len() < n && !set.contains(&b) {
                    set.push(b);
                }
            }
            if set.len() >= n {
                break;
            }
            let mut options: smallvec::SmallVec<[Voxel; 27]> = smallvec::smallvec![v];
            grid.for_each_neighbor(v, |nb| options.push(nb));
            let next = options[rng.gen_range(0..options.len())];
            t += if next == v {
                1.0
            } else {
                step_length(v, next) / speed
            };
            v = next;
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Repair,
    Baseline,
}

/// Fleet solver with iterative conflict repair.
pub fn solve(scenario: &Scenario) -> Result<SolveResult, DtappError> {
    scenario.validate()?;
    Ok(run(scenario, Variant::Repair))
}

/// Single prioritized pass where every other agent is a hard obstacle.
pub fn solve_pp_baseline(scenario: &Scenario) -> Result<SolveResult, DtappError> {
    scenario.validate()?;
    Ok(run(scenario, Variant::Baseline))
}

fn run(scenario: &Scenario, variant: Variant) -> SolveResult {
    let started = Instant::now();
    let params = &scenario.params;
    let deadline = started.checked_add(Duration::from_secs_f64(params.time_limit.min(1e9)));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let layer = Arc::new(SfiLayer::build(&scenario.grid, &scenario.nfzs).expect("validated scenario"));
    let mut planner = Planner {
        grid: &scenario.grid,
        layer,
        params,
        deadline,
        stats: SearchStats::default(),
    };
    let mode = match variant {
        Variant::Repair => params.soft_mode,
        Variant::Baseline => ConflictMode::Hard,
    };

    let order = sort_by_urgency(&scenario.fleet, &mut rng);
    let by_id: BTreeMap<UavId, &UavProfile> = scenario.fleet.iter().map(|p| (p.id, p)).collect();
    let mut paths: BTreeMap<UavId, Trajectory> = BTreeMap::new();
    let mut index = SoftIndex::new(params.gamma);
    let empty = SoftIndex::new(params.gamma);
    let use_soft = params.initial_pass_soft || variant == Variant::Baseline;

    let finish = |status: SolveStatus,
                  paths: BTreeMap<UavId, Trajectory>,
                  iterations: u64,
                  history: Vec<usize>,
                  final_conflicts: usize,
                  failed_agent: Option<UavId>,
                  stats: SearchStats| {
        let paths: Vec<Trajectory> = paths.into_values().collect();
        SolveResult {
            status,
            flowtime: total_flowtime(&paths),
            paths,
            iterations,
            conflict_history: history,
            wall_time: started.elapsed().as_secs_f64(),
            expanded_nodes: stats.expansions,
            search: stats,
            final_conflicts,
            failed_agent,
        }
    };

    for profile in &order {
        let soft = if use_soft { &index } else { &empty };
        match planner.round_trip(profile, soft, mode) {
            Ok(p) => {
                index.insert(&p);
                paths.insert(profile.id, p);
            }
            Err(e) => {
                let status = if e == PlanFailure::Timeout {
                    SolveStatus::Timeout
                } else {
                    SolveStatus::Failure
                };
                log::debug!("{}: initial planning failed: {e}", profile.id);
                let list: Vec<Trajectory> = paths.values().cloned().collect();
                let conflicts = count_conflicts(&list, params.gamma).edge_count();
                return finish(status, paths, 0, vec![conflicts], conflicts, Some(profile.id), planner.stats);
            }
        }
    }

    let mut list: Vec<Trajectory> = paths.values().cloned().collect();
    let mut graph = count_conflicts(&list, params.gamma);
    let mut history = vec![graph.edge_count()];
    let mut iterations = 0u64;

    if variant == Variant::Baseline {
        let status = if graph.edge_count() == 0 {
            SolveStatus::Success
        } else {
            SolveStatus::Failure
        };
        let c = graph.edge_count();
        log::debug!("search totals: {:?}", planner.stats);
        return finish(status, paths, 0, history, c, None, planner.stats);
    }

    let mut status = SolveStatus::Success;
    while graph.edge_count() > 0 {
        if started.elapsed().as_secs_f64() >= params.time_limit
            || params.max_iterations.is_some_and(|m| iterations >= m)
        {
            status = SolveStatus::Timeout;
            break;
        }
        iterations += 1;
        let mut group = neighborhood_with_index(
            &graph,
            &list,
            &index,
            params.neighborhood_size,
            &mut rng,
            &scenario.grid,
        )
        .expect("graph has edges");
        let old: Vec<Trajectory> = group.iter().map(|id| paths[id].clone()).collect();
        for id in &group {
            index.remove(*id);
            paths.remove(id);
        }
        group.shuffle(&mut rng);
        log::debug!("repair iteration {iterations}: replanning {group:?}");
        let mut added = Vec::new();
        let mut failed = None;
        for id in &group {
            match planner.round_trip(by_id[id], &index, mode) {
                Ok(p) => {
                    index.insert(&p);
                    paths.insert(*id, p);
                    added.push(*id);
                }
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = &failed {
            log::debug!("repair iteration {iterations} rolled back: {e}");
            for id in &added {
                index.remove(*id);
                paths.remove(id);
            }
            for p in old {
                index.insert(&p);
                paths.insert(p.uav, p);
            }
        }
        list = paths.values().cloned().collect();
        graph = count_conflicts(&list, params.gamma);
        history.push(graph.edge_count());
        log::debug!("repair iteration {iterations}: {} conflicts", graph.edge_count());
        if failed == Some(PlanFailure::Timeout) {
            status = SolveStatus::Timeout;
            break;
        }
    }
    let c = graph.edge_count();
    if c > 0 && status == SolveStatus::Success {
        status = SolveStatus::Timeout;
    }
    log::debug!("search totals: {:?}", planner.stats);
    finish(status, paths, iterations, history, c, None, planner.stats)
}
