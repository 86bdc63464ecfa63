//! Independent solution checker.
//!
//! Positions are sampled on the absolute time grid `k * dt` by linear
//! interpolation between waypoints; an agent is absent before its first and
//! after its last waypoint. A sample occupies voxel `v` when every
//! coordinate lies strictly within half a meter of `v`'s center, so points
//! on a voxel face or edge occupy nothing. Nothing here reuses the planner's
//! closed-form conflict code.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::grid::Voxel;
use crate::scenario::Scenario;
use crate::sfi::NfzRegion;
use crate::trajectory::{Trajectory, UavId};

pub const DEFAULT_DT: f64 = 0.01;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("path for unknown agent {0}")]
    UnknownAgent(UavId),
    #[error("sampling step must be positive, got {0}")]
    BadStep(f64),
    #[error("path of {0} is empty")]
    EmptyPath(UavId),
}

/// One violation; sampled instants in a row are merged into a time range.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoFly {
        uav: UavId,
        nfz: usize,
        voxel: Voxel,
        t_from: f64,
        t_to: f64,
    },
    Obstacle {
        uav: UavId,
        voxel: Voxel,
        t_from: f64,
        t_to: f64,
    },
    Separation {
        uav_a: UavId,
        uav_b: UavId,
        t_from: f64,
        t_to: f64,
        min_distance: f64,
        required: f64,
    },
    Structure {
        uav: UavId,
        problem: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dt: f64,
    pub samples: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn separation_pairs(&self) -> Vec<(UavId, UavId)> {
        let mut pairs: Vec<(UavId, UavId)> = self
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::Separation { uav_a, uav_b, .. } => Some((*uav_a, *uav_b)),
                _ => None,
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// Position samples of one path on the grid `k * dt`.
struct Samples<'a> {
    path: &'a Trajectory,
    dt: f64,
    seg: usize,
}

impl<'a> Samples<'a> {
    fn new(path: &'a Trajectory, dt: f64) -> Self {
        Self { path, dt, seg: 0 }
    }

    fn first_k(&self) -> i64 {
        (self.path.tuples[0].t / self.dt - TIME_EPS).ceil() as i64
    }

    fn last_k(&self) -> i64 {
        (self.path.tuples[self.path.tuples.len() - 1].t / self.dt + TIME_EPS).floor() as i64
    }

    /// Position at `k * dt`; calls must use nondecreasing `k`.
    fn at(&mut self, k: i64) -> Option<[f64; 3]> {
        let t = k as f64 * self.dt;
        let tuples = &self.path.tuples;
        let first = tuples[0];
        let last = tuples[tuples.len() - 1];
        if t < first.t - TIME_EPS * self.dt || t > last.t + TIME_EPS * self.dt {
            return None;
        }
        while self.seg + 1 < tuples.len() && tuples[self.seg + 1].t < t {
            self.seg += 1;
        }
        let a = tuples[self.seg];
        let Some(&b) = tuples.get(self.seg + 1) else {
            return Some(coords(a.voxel));
        };
        let span = b.t - a.t;
        let s = if span > 0.0 {
            ((t - a.t) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let (pa, pb) = (coords(a.voxel), coords(b.voxel));
        Some([
            pa[0] + s * (pb[0] - pa[0]),
            pa[1] + s * (pb[1] - pa[1]),
            pa[2] + s * (pb[2] - pa[2]),
        ])
    }
}

fn coords(v: Voxel) -> [f64; 3] {
    [v.x as f64, v.y as f64, v.z as f64]
}

fn occupied(p: [f64; 3], dims: [u32; 3]) -> Option<Voxel> {
    let mut out = [0u32; 3];
    for k in 0..3 {
        let r = p[k].round();
        if (p[k] - r).abs() >= 0.5 || r < 0.0 || r >= dims[k] as f64 {
            return None;
        }
        out[k] = r as u32;
    }
    Some(Voxel::new(out[0], out[1], out[2]))
}

enum Region<'a> {
    Box(&'a NfzRegion),
    Set(HashSet<Voxel>),
}

impl Region<'_> {
    fn contains(&self, v: Voxel) -> bool {
        match self {
            Region::Box(r) => r.contains(v),
            Region::Set(s) => s.contains(&v),
        }
    }
}

/// Grouping of consecutive violating samples.
struct Runs<K: Ord> {
    open: BTreeMap<K, (i64, i64, f64)>,
    closed: Vec<(K, i64, i64, f64)>,
}

impl<K: Ord + Clone> Runs<K> {
    fn new() -> Self {
        Self {
            open: BTreeMap::new(),
            closed: Vec::new(),
        }
    }

    fn hit(&mut self, key: K, k: i64, value: f64) {
        match self.open.get_mut(&key) {
            Some(run) if run.1 == k - 1 => {
                run.1 = k;
                run.2 = run.2.min(value);
            }
            Some(run) => {
                let old = *run;
                *run = (k, k, value);
                self.closed.push((key, old.0, old.1, old.2));
            }
            None => {
                self.open.insert(key, (k, k, value));
            }
        }
    }

    fn finish(mut self) -> Vec<(K, i64, i64, f64)> {
        for (key, (a, b, v)) in self.open {
            self.closed.push((key, a, b, v));
        }
        self.closed.sort_by(|x, y| x.1.cmp(&y.1).then(x.0.cmp(&y.0)));
        self.closed
    }
}

fn structure(scenario: &Scenario, path: &Trajectory, out: &mut Vec<Violation>) {
    let uav = path.uav;
    let mut problem = |problem: String| out.push(Violation::Structure { uav, problem });
    let Some(profile) = scenario.profile(uav) else {
        return;
    };
    let tuples = &path.tuples;
    if tuples.is_empty() {
        problem("empty path".into());
        return;
    }
    if tuples[0].voxel != profile.hub {
        problem(format!("starts at {} instead of hub {}", tuples[0].voxel, profile.hub));
    }
    if tuples[tuples.len() - 1].voxel != profile.hub {
        problem(format!(
            "ends at {} instead of hub {}",
            tuples[tuples.len() - 1].voxel,
            profile.hub
        ));
    }
    if tuples[0].t < profile.t_init - TIME_EPS {
        problem(format!("departs at {} before its start time {}", tuples[0].t, profile.t_init));
    }
    if (path.radius - profile.radius).abs() > 1e-12 {
        problem(format!("radius {} differs from profile radius {}", path.radius, profile.radius));
    }
    for (i, w) in tuples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            problem(format!("time does not increase at tuple {}", i + 1));
        }
        let d = [
            w[0].voxel.x.abs_diff(w[1].voxel.x),
            w[0].voxel.y.abs_diff(w[1].voxel.y),
            w[0].voxel.z.abs_diff(w[1].voxel.z),
        ];
        if d.iter().any(|&x| x > 1) {
            problem(format!("tuple {} jumps from {} to {}", i + 1, w[0].voxel, w[1].voxel));
        } else if w[1].t > w[0].t {
            let len = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt();
            let speed = len / (w[1].t - w[0].t);
            if speed > profile.speed * (1.0 + 1e-9) {
                problem(format!("tuple {} moves at {speed} m/s above {}", i + 1, profile.speed));
            }
        }
    }
    let tau = path.outbound_index;
    match tuples.iter().position(|w| w.voxel == profile.delivery) {
        None => problem(format!("never reaches delivery {}", profile.delivery)),
        Some(first) if first != tau => {
            problem(format!("outbound index {tau} but delivery first reached at {first}"))
        }
        Some(_) => {
            let w = scenario.params.wait_duration;
            let steps = if w > 0.0 { w.ceil() as usize } else { 0 };
            if path.wait_steps != steps {
                problem(format!("wait block has {} steps, expected {steps}", path.wait_steps));
            }
            let run = tuples[tau..]
                .iter()
                .take_while(|x| x.voxel == profile.delivery)
                .count();
            let span = tuples[tau + run - 1].t - tuples[tau].t;
            if run < path.wait_steps + 1 || span < w - TIME_EPS {
                problem(format!("hovers {span} s at delivery over {run} tuples, needs {w} s"));
            }
        }
    }
}

/// Checks every path against no-fly zones, obstacles, pairwise separation and
/// roundtrip structure at resolution `dt`.
pub fn validate_solution(
    scenario: &Scenario,
    paths: &[Trajectory],
    dt: f64,
) -> Result<ValidationReport, ValidationError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ValidationError::BadStep(dt));
    }
    for p in paths {
        if scenario.profile(p.uav).is_none() {
            return Err(ValidationError::UnknownAgent(p.uav));
        }
    }
    let mut report = ValidationReport {
        dt,
        samples: 0,
        violations: Vec::new(),
    };
    let dims = scenario.grid.dims();
    let regions: Vec<Region> = scenario
        .nfzs
        .iter()
        .map(|z| match &z.region {
            NfzRegion::Box { .. } => Region::Box(&z.region),
            NfzRegion::Voxels(list) => Region::Set(list.iter().copied().collect()),
        })
        .collect();

    for path in paths {
        structure(scenario, path, &mut report.violations);
        if path.tuples.is_empty() {
            continue;
        }
        let profile = scenario.profile(path.uav).expect("checked above");
        let mut nfz_runs: Runs<(usize, Voxel)> = Runs::new();
        let mut obstacle_runs: Runs<Voxel> = Runs::new();
        let mut s = Samples::new(path, dt);
        for k in s.first_k()..=s.last_k() {
            let Some(p) = s.at(k) else { continue };
            report.samples += 1;
            let Some(v) = occupied(p, dims) else { continue };
            if scenario.grid.blocked_at(v) {
                obstacle_runs.hit(v, k, 0.0);
            }
            if v == profile.hub || v == profile.delivery {
                continue;
            }
            let t = k as f64 * dt;
            for (i, z) in scenario.nfzs.iter().enumerate() {
                if z.t_start <= t && t < z.t_end && regions[i].contains(v) {
                    nfz_runs.hit((i, v), k, 0.0);
                }
            }
        }
        for ((nfz, voxel), a, b, _) in nfz_runs.finish() {
            report.violations.push(Violation::NoFly {
                uav: path.uav,
                nfz,
                voxel,
                t_from: a as f64 * dt,
                t_to: b as f64 * dt,
            });
        }
        for (voxel, a, b, _) in obstacle_runs.finish() {
            report.violations.push(Violation::Obstacle {
                uav: path.uav,
                voxel,
                t_from: a as f64 * dt,
                t_to: b as f64 * dt,
            });
        }
    }

    let gamma = scenario.params.gamma;
    let live: Vec<&Trajectory> = paths.iter().filter(|p| !p.tuples.is_empty()).collect();
    for i in 0..live.len() {
        for j in (i + 1)..live.len() {
            let (a, b) = if live[i].uav < live[j].uav {
                (live[i], live[j])
            } else {
                (live[j], live[i])
            };
            let mut sa = Samples::new(a, dt);
            let mut sb = Samples::new(b, dt);
            let lo = sa.first_k().max(sb.first_k());
            let hi = sa.last_k().min(sb.last_k());
            if lo > hi {
                continue;
            }
            let required = a.radius + b.radius + gamma;
            let mut runs: Runs<()> = Runs::new();
            for k in lo..=hi {
                let (Some(pa), Some(pb)) = (sa.at(k), sb.at(k)) else {
                    continue;
                };
                let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
                if d <= required {
                    runs.hit((), k, d);
                }
            }
            for ((), from, to, min_distance) in runs.finish() {
                report.violations.push(Violation::Separation {
                    uav_a: a.uav,
                    uav_b: b.uav,
                    t_from: from as f64 * dt,
                    t_to: to as f64 * dt,
                    min_distance,
                    required,
                });
            }
        }
    }
    Ok(report)
}

/// Sum over paths of last minus first waypoint time.
pub fn flowtime(paths: &[Trajectory]) -> Result<f64, ValidationError> {
    paths.iter().try_fold(0.0, |acc, p| {
        let first = p.tuples.first().ok_or(ValidationError::EmptyPath(p.uav))?;
        let last = p.tuples.last().ok_or(ValidationError::EmptyPath(p.uav))?;
        Ok(acc + (last.t - first.t))
    })
}
