//! Scenario generation and the JSON formats for scenarios, city maps and
//! solutions.
//!
//! Random draws happen in a fixed order from one ChaCha8 stream seeded with
//! the scenario seed: obstacles, then the fleet (per agent: hub, delivery,
//! start time, radius, speed), then no-fly zones (per zone: window, box
//! size, box position).

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtapp::{ParamsError, SolveResult, SolveStatus, SolverParams};
use crate::grid::{GridError, GridMap, Voxel};
use crate::sfi::{NfzRegion, NoFlyZone, SfiError};
use crate::sfippst::{ProfileError, UavProfile};
use crate::trajectory::{Trajectory, UavId, Waypoint};

pub const SCENARIO_FORMAT: &str = "preflight-scenario";
pub const SOLUTION_FORMAT: &str = "preflight-solution";
pub const FORMAT_VERSION: u32 = 1;

/// Levels `0..OBSTACLE_LEVELS` hold static obstacles; the rest is airspace.
pub const OBSTACLE_LEVELS: u32 = 4;
/// City-map no-fly zones are expected at or above this level.
pub const CITY_NFZ_MIN_Z: u32 = 12;

pub const T_INIT_RANGE: (f64, f64) = (1.0, 1000.0);
pub const RADIUS_RANGE: (f64, f64) = (0.5, 2.0);
pub const SPEED_RANGE: (f64, f64) = (1.0, 5.0);
pub const NFZ_WINDOW: (f64, f64) = (100.0, 500.0);
/// Fraction of open airspace covered by one generated zone.
pub const NFZ_AIRSPACE_FRACTION: (f64, f64) = (0.02, 0.05);
/// Voxel count of one city-map zone.
pub const CITY_NFZ_VOXELS: (usize, usize) = (500, 2000);

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported format `{format}` version {version}")]
    Format { format: String, version: u32 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Nfz(#[from] SfiError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("duplicate agent id {0}")]
    DuplicateId(UavId),
    #[error("obstacle density {0} is outside [0, 1)")]
    Density(f64),
    #[error("{needed} obstacles requested but only {available} voxels lie in the obstacle levels")]
    TooManyObstacles { needed: usize, available: usize },
    #[error("only {free} free voxels left; a fleet needs at least 2")]
    TooFewFreeVoxels { free: usize },
    #[error("hub `{name}` at {voxel}: {reason}")]
    Hub {
        name: String,
        voxel: Voxel,
        reason: &'static str,
    },
    #[error("city map has no hubs")]
    NoHubs,
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// World, fleet and solver parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub grid: GridMap,
    pub nfzs: Vec<NoFlyZone>,
    pub fleet: Vec<UavProfile>,
    pub params: SolverParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (i, nfz) in self.nfzs.iter().enumerate() {
            nfz.validate(i, &self.grid)?;
        }
        let mut ids = BTreeSet::new();
        for p in &self.fleet {
            p.validate(&self.grid)?;
            if !ids.insert(p.id) {
                return Err(ScenarioError::DuplicateId(p.id));
            }
        }
        self.params.validate()?;
        Ok(())
    }

    pub fn profile(&self, id: UavId) -> Option<&UavProfile> {
        self.fleet.iter().find(|p| p.id == id)
    }
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..=range.1)
}

fn free_voxels(grid: &GridMap) -> Vec<Voxel> {
    (0..grid.volume())
        .map(|i| grid.voxel_at(i))
        .filter(|&v| !grid.blocked_at(v))
        .collect()
}

fn sample_mission<R: Rng>(rng: &mut R, free: &[Voxel], hub: Option<Voxel>) -> (Voxel, Voxel) {
    let hub = hub.unwrap_or_else(|| free[rng.gen_range(0..free.len())]);
    loop {
        let d = free[rng.gen_range(0..free.len())];
        if d != hub {
            return (hub, d);
        }
    }
}

fn sample_profile<R: Rng>(rng: &mut R, id: u32, free: &[Voxel], hub: Option<Voxel>) -> UavProfile {
    let (hub, delivery) = sample_mission(rng, free, hub);
    UavProfile {
        id: UavId(id),
        hub,
        delivery,
        t_init: uniform(rng, T_INIT_RANGE),
        radius: uniform(rng, RADIUS_RANGE),
        speed: uniform(rng, SPEED_RANGE),
    }
}

fn sample_window<R: Rng>(rng: &mut R) -> (f64, f64) {
    loop {
        let a = uniform(rng, NFZ_WINDOW);
        let b = uniform(rng, NFZ_WINDOW);
        if a != b {
            return (a.min(b), a.max(b));
        }
    }
}

/// Random box of roughly `target` voxels inside `[lo_z, dims.z)`.
fn sample_box<R: Rng>(rng: &mut R, dims: [u32; 3], lo_z: u32, target: f64) -> NfzRegion {
    let levels = dims[2] - lo_z;
    let hz = rng.gen_range(1..=levels);
    let area = (target / hz as f64).max(1.0);
    let aspect: f64 = rng.gen_range(0.5..=2.0);
    let wx = ((area * aspect).sqrt().round() as u32).clamp(1, dims[0]);
    let wy = ((area / wx as f64).round() as u32).clamp(1, dims[1]);
    let x0 = rng.gen_range(0..=dims[0] - wx);
    let y0 = rng.gen_range(0..=dims[1] - wy);
    let z0 = rng.gen_range(lo_z..=dims[2] - hz);
    NfzRegion::Box {
        min: Voxel::new(x0, y0, z0),
        max: Voxel::new(x0 + wx - 1, y0 + wy - 1, z0 + hz - 1),
    }
}

/// Random world with `floor(density * volume)` obstacles in the lower
/// levels, a fleet of `n_agents` missions and `n_nfzs` timed no-fly zones
/// in the open airspace.
pub fn generate_scenario(
    dims: [u32; 3],
    obstacle_density: f64,
    n_agents: usize,
    n_nfzs: usize,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if !(0.0..1.0).contains(&obstacle_density) {
        return Err(ScenarioError::Density(obstacle_density));
    }
    let mut grid = GridMap::new(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let needed = (obstacle_density * grid.volume() as f64).floor() as usize;
    let low = dims[2].min(OBSTACLE_LEVELS) as usize;
    let available = dims[0] as usize * dims[1] as usize * low;
    if needed > available {
        return Err(ScenarioError::TooManyObstacles { needed, available });
    }
    let mut picked = sample(&mut rng, available, needed).into_vec();
    picked.sort_unstable();
    for i in picked {
        // the obstacle levels are a prefix of the linear index order
        grid.add_obstacle(grid.voxel_at(i))?;
    }

    let free = free_voxels(&grid);
    if n_agents > 0 && free.len() < 2 {
        return Err(ScenarioError::TooFewFreeVoxels { free: free.len() });
    }
    let fleet = (0..n_agents)
        .map(|i| sample_profile(&mut rng, i as u32, &free, None))
        .collect();

    let lo_z = if dims[2] > OBSTACLE_LEVELS { OBSTACLE_LEVELS } else { 0 };
    let airspace = dims[0] as f64 * dims[1] as f64 * (dims[2] - lo_z) as f64;
    let nfzs = (0..n_nfzs)
        .map(|_| {
            let (t_start, t_end) = sample_window(&mut rng);
            let target = airspace * uniform(&mut rng, NFZ_AIRSPACE_FRACTION);
            NoFlyZone {
                region: sample_box(&mut rng, dims, lo_z, target),
                t_start,
                t_end,
            }
        })
        .collect();

    Ok(Scenario {
        grid,
        nfzs,
        fleet,
        params: SolverParams {
            seed,
            ..Default::default()
        },
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format: String,
    version: u32,
    dims: [u32; 3],
    obstacles: Vec<Voxel>,
    #[serde(default)]
    nfzs: Vec<NoFlyZone>,
    fleet: Vec<UavProfile>,
    #[serde(default)]
    params: SolverParams,
}

fn parse<T: DeserializeOwned, R: Read>(source: R) -> Result<T, ScenarioError> {
    let mut de = serde_json::Deserializer::from_reader(source);
    serde_path_to_error::deserialize(&mut de).map_err(|e| ScenarioError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn check_format(format: &str, version: u32, expected: &str) -> Result<(), ScenarioError> {
    if format != expected || version != FORMAT_VERSION {
        return Err(ScenarioError::Format {
            format: format.to_string(),
            version,
        });
    }
    Ok(())
}

pub fn save_scenario<W: Write>(s: &Scenario, mut sink: W) -> Result<(), ScenarioError> {
    let file = ScenarioFile {
        format: SCENARIO_FORMAT.to_string(),
        version: FORMAT_VERSION,
        dims: s.grid.dims(),
        obstacles: s.grid.obstacles().collect(),
        nfzs: s.nfzs.clone(),
        fleet: s.fleet.clone(),
        params: s.params.clone(),
    };
    serde_json::to_writer_pretty(&mut sink, &file)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn load_scenario<R: Read>(source: R) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = parse(source)?;
    check_format(&file.format, file.version, SCENARIO_FORMAT)?;
    let scenario = Scenario {
        grid: GridMap::with_obstacles(file.dims, file.obstacles)?,
        nfzs: file.nfzs,
        fleet: file.fleet,
        params: file.params,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// One agent's path in a solution file; tuples are `[x, y, z, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub uav: UavId,
    pub radius: f64,
    pub outbound_index: usize,
    pub wait_steps: usize,
    pub tuples: Vec<(u32, u32, u32, f64)>,
}

impl From<&Trajectory> for PathRecord {
    fn from(p: &Trajectory) -> Self {
        Self {
            uav: p.uav,
            radius: p.radius,
            outbound_index: p.outbound_index,
            wait_steps: p.wait_steps,
            tuples: p
                .tuples
                .iter()
                .map(|w| (w.voxel.x, w.voxel.y, w.voxel.z, w.t))
                .collect(),
        }
    }
}

impl From<&PathRecord> for Trajectory {
    fn from(r: &PathRecord) -> Self {
        Self {
            uav: r.uav,
            radius: r.radius,
            tuples: r
                .tuples
                .iter()
                .map(|&(x, y, z, t)| Waypoint::new(Voxel::new(x, y, z), t))
                .collect(),
            outbound_index: r.outbound_index,
            wait_steps: r.wait_steps,
        }
    }
}

/// Solution file contents. `complete` is false when the solver stopped
/// before every agent had a conflict-free path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub format: String,
    pub version: u32,
    pub status: SolveStatus,
    pub complete: bool,
    pub flowtime: f64,
    pub iterations: u64,
    pub conflict_history: Vec<usize>,
    pub expanded_nodes: u64,
    pub final_conflicts: usize,
    #[serde(default)]
    pub failed_agent: Option<UavId>,
    pub wall_time: f64,
    pub paths: Vec<PathRecord>,
}

impl SolutionFile {
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.paths.iter().map(Trajectory::from).collect()
    }
}

impl From<&SolveResult> for SolutionFile {
    fn from(r: &SolveResult) -> Self {
        Self {
            format: SOLUTION_FORMAT.to_string(),
            version: FORMAT_VERSION,
            status: r.status,
            complete: r.status == SolveStatus::Success,
            flowtime: r.flowtime,
            iterations: r.iterations,
            conflict_history: r.conflict_history.clone(),
            expanded_nodes: r.expanded_nodes,
            final_conflicts: r.final_conflicts,
            failed_agent: r.failed_agent,
            wall_time: r.wall_time,
            paths: r.paths.iter().map(PathRecord::from).collect(),
        }
    }
}

pub fn export_solution<W: Write>(result: &SolveResult, mut sink: W) -> Result<(), ScenarioError> {
    serde_json::to_writer_pretty(&mut sink, &SolutionFile::from(result))?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn load_solution<R: Read>(source: R) -> Result<SolutionFile, ScenarioError> {
    let file: SolutionFile = parse(source)?;
    check_format(&file.format, file.version, SOLUTION_FORMAT)?;
    Ok(file)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedHub {
    pub name: String,
    pub voxel: Voxel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleBox {
    pub min: Voxel,
    pub max: Voxel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CityMapFile {
    dims: [u32; 3],
    #[serde(default)]
    obstacles: Vec<Voxel>,
    #[serde(default)]
    boxes: Vec<ObstacleBox>,
    hubs: Vec<NamedHub>,
    #[serde(default)]
    nfzs: Vec<NoFlyZone>,
}

/// A loaded city map: world, named hubs and no-fly-zone schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct CityMap {
    pub grid: GridMap,
    pub hubs: Vec<NamedHub>,
    pub nfzs: Vec<NoFlyZone>,
    /// Non-fatal findings, such as zones reaching below the usual level.
    pub warnings: Vec<String>,
}

pub fn load_city_map<R: Read>(source: R) -> Result<CityMap, ScenarioError> {
    let file: CityMapFile = parse(source)?;
    let mut grid = GridMap::with_obstacles(file.dims, file.obstacles)?;
    for b in &file.boxes {
        grid.checked_index(b.min)?;
        grid.checked_index(b.max)?;
        for z in b.min.z..=b.max.z {
            for y in b.min.y..=b.max.y {
                for x in b.min.x..=b.max.x {
                    grid.add_obstacle(Voxel::new(x, y, z))?;
                }
            }
        }
    }
    if file.hubs.is_empty() {
        return Err(ScenarioError::NoHubs);
    }
    for h in &file.hubs {
        let reason = if !grid.in_bounds(h.voxel) {
            Some("outside the grid")
        } else if grid.blocked_at(h.voxel) {
            Some("inside an obstacle")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(ScenarioError::Hub {
                name: h.name.clone(),
                voxel: h.voxel,
                reason,
            });
        }
    }
    let mut warnings = Vec::new();
    for (i, nfz) in file.nfzs.iter().enumerate() {
        nfz.validate(i, &grid)?;
        if let Some(z) = nfz.region.min_z().filter(|&z| z < CITY_NFZ_MIN_Z) {
            let msg = format!("no-fly zone {i} reaches down to z={z}, below z={CITY_NFZ_MIN_Z}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(CityMap {
        grid,
        hubs: file.hubs,
        nfzs: file.nfzs,
        warnings,
    })
}

impl CityMap {
    /// Hub-based fleet: each mission starts at a uniformly chosen hub and
    /// delivers to a uniformly chosen free voxel.
    pub fn generate_fleet(&self, n_agents: usize, seed: u64) -> Result<Vec<UavProfile>, ScenarioError> {
        let free = free_voxels(&self.grid);
        if n_agents > 0 && free.len() < 2 {
            return Err(ScenarioError::TooFewFreeVoxels { free: free.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n_agents)
            .map(|i| {
                let hub = self.hubs[rng.gen_range(0..self.hubs.len())].voxel;
                sample_profile(&mut rng, i as u32, &free, Some(hub))
            })
            .collect())
    }

    /// Random timed zone boxes of 500 to 2000 voxels at or above the usual
    /// city level (or the top level when the map is lower).
    pub fn generate_nfzs(&self, count: usize, seed: u64) -> Vec<NoFlyZone> {
        let dims = self.grid.dims();
        let lo_z = CITY_NFZ_MIN_Z.min(dims[2] - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let (t_start, t_end) = sample_window(&mut rng);
                let target = rng.gen_range(CITY_NFZ_VOXELS.0..=CITY_NFZ_VOXELS.1) as f64;
                NoFlyZone {
                    region: sample_box(&mut rng, dims, lo_z, target),
                    t_start,
                    t_end,
                }
            })
            .collect()
    }

    pub fn into_scenario(self, fleet: Vec<UavProfile>, params: SolverParams) -> Result<Scenario, ScenarioError> {
        let s = Scenario {
            grid: self.grid,
            nfzs: self.nfzs,
            fleet,
            params,
        };
        s.validate()?;
        Ok(s)
    }
}
