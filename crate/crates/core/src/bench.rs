//! Benchmark suites: generate scenarios over a parameter grid, solve each
//! with the requested solver variants, and record one CSV row per run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtapp::{solve, solve_pp_baseline, DtappError, SolveResult, SolveStatus};
use crate::scenario::{export_solution, generate_scenario, save_scenario, Scenario, ScenarioError};
use crate::sfippst::Pruning;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PREFLIGHT_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("preflight-out"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dtapp,
    Pp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Dtapp => "dtapp",
            SolverKind::Pp => "pp",
        }
    }

    pub fn run(self, scenario: &Scenario) -> Result<SolveResult, DtappError> {
        match self {
            SolverKind::Dtapp => solve(scenario),
            SolverKind::Pp => solve_pp_baseline(scenario),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dtapp" => Ok(SolverKind::Dtapp),
            "pp" => Ok(SolverKind::Pp),
            other => Err(format!("unknown solver `{other}` (expected dtapp or pp)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] DtappError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite config: {0}")]
    Config(String),
}

/// A grid of runs: every combination of agent count, density, zone count
/// and seed, solved with every solver and pruning setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    pub dims: [u32; 3],
    pub agents: Vec<usize>,
    pub densities: Vec<f64>,
    #[serde(default = "zero_nfz")]
    pub nfz_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverKind>,
    #[serde(default = "pruning_on")]
    pub pruning: Vec<bool>,
    /// Seconds per run.
    pub time_limit: f64,
    #[serde(default)]
    pub neighborhood_size: Option<usize>,
}

fn zero_nfz() -> Vec<usize> {
    vec![0]
}

fn pruning_on() -> Vec<bool> {
    vec![true]
}

impl SuiteConfig {
    pub fn load<R: Read>(source: R) -> Result<Self, BenchError> {
        let cfg: SuiteConfig =
            serde_json::from_reader(source).map_err(|e| BenchError::Config(e.to_string()))?;
        if !(cfg.time_limit > 0.0) {
            return Err(BenchError::Config("time_limit must be positive".into()));
        }
        Ok(cfg)
    }

    /// Runs in a fixed order: scenario parameters outermost, then solver,
    /// then pruning.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &agents in &self.agents {
            for &density in &self.densities {
                for &nfz_count in &self.nfz_counts {
                    for &seed in &self.seeds {
                        for &solver in &self.solvers {
                            for &pruning in &self.pruning {
                                out.push(RunSpec {
                                    dims: self.dims,
                                    agents,
                                    density,
                                    nfz_count,
                                    seed,
                                    solver,
                                    pruning,
                                    time_limit: self.time_limit,
                                    neighborhood_size: self.neighborhood_size,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub dims: [u32; 3],
    pub agents: usize,
    pub density: f64,
    pub nfz_count: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub pruning: bool,
    pub time_limit: f64,
    pub neighborhood_size: Option<usize>,
}

impl RunSpec {
    pub fn scenario_id(&self) -> String {
        format!(
            "{}x{}x{}_n{}_d{}_z{}_s{}",
            self.dims[0], self.dims[1], self.dims[2], self.agents, self.density, self.nfz_count, self.seed
        )
    }

    pub fn scenario(&self) -> Result<Scenario, BenchError> {
        let mut s = generate_scenario(self.dims, self.density, self.agents, self.nfz_count, self.seed)?;
        s.params.time_limit = self.time_limit;
        s.params.pruning = if self.pruning { Pruning::Directional } else { Pruning::Off };
        if let Some(n) = self.neighborhood_size {
            s.params.neighborhood_size = n;
        }
        Ok(s)
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario_id: String,
    pub solver: SolverKind,
    pub pruning: bool,
    pub agents: usize,
    pub density: f64,
    pub nfz_count: usize,
    pub seed: u64,
    pub status: SolveStatus,
    pub wall_time: f64,
    pub flowtime: f64,
    pub iterations: u64,
    pub expanded_nodes: u64,
    pub final_conflicts: usize,
}

/// Generates and solves one run. With `artifacts`, the scenario and the
/// solution are written there as JSON.
pub fn run_one(spec: &RunSpec, artifacts: Option<&Path>) -> Result<(BenchRow, SolveResult), BenchError> {
    let scenario = spec.scenario()?;
    let result = spec.solver.run(&scenario)?;
    let id = spec.scenario_id();
    if let Some(dir) = artifacts {
        std::fs::create_dir_all(dir)?;
        save_scenario(&scenario, std::fs::File::create(dir.join(format!("{id}.scenario.json")))?)?;
        let tag = format!("{}_{}", spec.solver, if spec.pruning { "pruned" } else { "full" });
        export_solution(&result, std::fs::File::create(dir.join(format!("{id}.{tag}.solution.json")))?)?;
    }
    let row = BenchRow {
        scenario_id: id,
        solver: spec.solver,
        pruning: spec.pruning,
        agents: spec.agents,
        density: spec.density,
        nfz_count: spec.nfz_count,
        seed: spec.seed,
        status: result.status,
        wall_time: result.wall_time,
        flowtime: result.flowtime,
        iterations: result.iterations,
        expanded_nodes: result.expanded_nodes,
        final_conflicts: result.final_conflicts,
    };
    Ok((row, result))
}

/// Runs a suite with up to `jobs` runs in flight and appends the rows, in
/// suite order, to the CSV at `csv_path` (writing a header for a new file).
pub fn run_suite(
    cfg: &SuiteConfig,
    csv_path: &Path,
    artifacts: Option<&Path>,
    jobs: usize,
) -> Result<Vec<BenchRow>, BenchError> {
    let specs = cfg.runs();
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<BenchRow, BenchError>>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(spec) = specs.get(i) else { break };
                log::info!("run {}/{}: {} {}", i + 1, specs.len(), spec.scenario_id(), spec.solver);
                let row = run_one(spec, artifacts).map(|(row, _)| row);
                *slots[i].lock().expect("slot lock") = Some(row);
            });
        }
    });
    let rows: Vec<BenchRow> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every run finished"))
        .collect::<Result<_, _>>()?;
    append_rows(csv_path, &rows)?;
    Ok(rows)
}

pub fn append_rows(csv_path: &Path, rows: &[BenchRow]) -> Result<(), BenchError> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = OpenOptions::new().create(true).append(true).open(csv_path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(source: R) -> Result<Vec<BenchRow>, BenchError> {
    let mut rd = csv::Reader::from_reader(source);
    Ok(rd.deserialize().collect::<Result<Vec<BenchRow>, _>>()?)
}

/// Aggregate over one (solver, pruning, agents, density, zone count) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub solver: SolverKind,
    pub pruning: bool,
    pub agents: usize,
    pub density: f64,
    pub nfz_count: usize,
    pub runs: usize,
    /// Percentage of runs with status success.
    pub success_rate: f64,
    /// Runtime with `time_limit` counted for every unsolved run.
    pub mean_runtime: f64,
    /// Sample standard deviation of the same runtimes.
    pub std_runtime: f64,
    /// Mean flowtime over successful runs.
    pub mean_flowtime: Option<f64>,
    pub mean_expanded_nodes: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn summarize_rows(rows: &[BenchRow], time_limit: f64) -> Vec<SummaryRow> {
    type Key = (SolverKind, bool, usize, u64, usize);
    let mut groups: BTreeMap<Key, Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.solver, r.pruning, r.agents, r.density.to_bits(), r.nfz_count))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((solver, pruning, agents, density, nfz_count), g)| {
            let solved: Vec<&&BenchRow> = g.iter().filter(|r| r.status == SolveStatus::Success).collect();
            let runtimes: Vec<f64> = g
                .iter()
                .map(|r| if r.status == SolveStatus::Success { r.wall_time } else { time_limit })
                .collect();
            let flows: Vec<f64> = solved.iter().map(|r| r.flowtime).collect();
            let expanded: Vec<f64> = g.iter().map(|r| r.expanded_nodes as f64).collect();
            SummaryRow {
                solver,
                pruning,
                agents,
                density: f64::from_bits(density),
                nfz_count,
                runs: g.len(),
                success_rate: 100.0 * solved.len() as f64 / g.len() as f64,
                mean_runtime: mean(&runtimes),
                std_runtime: sample_std(&runtimes),
                mean_flowtime: (!flows.is_empty()).then(|| mean(&flows)),
                mean_expanded_nodes: mean(&expanded),
            }
        })
        .collect()
}

/// Reads a results CSV and aggregates it per configuration.
pub fn summarize<R: Read>(csv: R, time_limit: f64) -> Result<Vec<SummaryRow>, BenchError> {
    Ok(summarize_rows(&read_rows(csv)?, time_limit))
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:<7} {:>6} {:>7} {:>4} {:>5} {:>8} {:>20} {:>12} {:>12}",
        "solver", "pruning", "agents", "density", "nfz", "runs", "success", "runtime (s)", "flowtime", "expanded"
    );
    for r in rows {
        let flow = r.mean_flowtime.map_or("-".to_string(), |f| format!("{f:.1}"));
        let _ = writeln!(
            out,
            "{:<6} {:<7} {:>6} {:>7} {:>4} {:>5} {:>7.1}% {:>9.2} ± {:>8.2} {:>12} {:>12.0}",
            r.solver.as_str(),
            if r.pruning { "on" } else { "off" },
            r.agents,
            r.density,
            r.nfz_count,
            r.runs,
            r.success_rate,
            r.mean_runtime,
            r.std_runtime,
            flow,
            r.mean_expanded_nodes
        );
    }
    out
}
