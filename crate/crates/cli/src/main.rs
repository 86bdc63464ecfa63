use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use preflight::bench::{self, SolverKind, SuiteConfig};
use preflight::scenario::{export_solution, load_city_map, load_solution, Scenario};
use preflight::{generate_scenario, load_scenario, save_scenario, validate_solution, Pruning, SolveStatus};

#[derive(Parser)]
#[command(name = "preflight", version, about = "4D preflight planning for UAV fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write the solution JSON.
    Solve(SolveArgs),
    /// Generate a random scenario (or a fleet on a city map).
    Generate(GenerateArgs),
    /// Check a solution against its scenario; exits with 1 on any violation.
    Validate(ValidateArgs),
    /// Run a benchmark suite and append its rows to a CSV file.
    Bench(BenchArgs),
    /// Aggregate a benchmark CSV per configuration.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SolveArgs {
    scenario: PathBuf,
    /// Output file; defaults to <out dir>/<scenario name>.solution.json.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "dtapp")]
    solver: SolverKind,
    /// Expand all 26 neighbors at every node.
    #[arg(long)]
    no_pruning: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Safety buffer in meters.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    neighborhood: Option<usize>,
    /// Plan the initial pass without regard to other agents.
    #[arg(long)]
    empty_initial_pass: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output scenario file.
    #[arg(short, long)]
    out: PathBuf,
    /// Grid size as X,Y,Z.
    #[arg(long, value_parser = parse_dims, default_value = "100,100,10")]
    dims: [u32; 3],
    /// Fraction of all voxels turned into obstacles.
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 10)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    nfzs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Build the fleet on this city map instead of a random world.
    #[arg(long)]
    city_map: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    scenario: PathBuf,
    solution: PathBuf,
    /// Sampling step in seconds.
    #[arg(long, default_value_t = preflight::validate::DEFAULT_DT)]
    dt: f64,
    /// Write the full report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    /// Results file; defaults to <out dir>/<suite name>.csv.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write every scenario and solution as JSON into this directory.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Runs executed at the same time.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    csv: PathBuf,
    /// Runtime charged to unsolved runs, seconds.
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    #[arg(long)]
    json: bool,
}

fn parse_dims(s: &str) -> Result<[u32; 3], String> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected X,Y,Z".to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    load_scenario(open(path)?).with_context(|| format!("invalid scenario {}", path.display()))
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".scenario.json")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(&name)
        .to_string()
}

fn cmd_solve(a: SolveArgs) -> Result<ExitCode> {
    let mut s = read_scenario(&a.scenario)?;
    if a.no_pruning {
        s.params.pruning = Pruning::Off;
    }
    if let Some(v) = a.seed {
        s.params.seed = v;
    }
    if let Some(v) = a.time_limit {
        s.params.time_limit = v;
    }
    if let Some(v) = a.gamma {
        s.params.gamma = v;
    }
    if let Some(v) = a.neighborhood {
        s.params.neighborhood_size = v;
    }
    if a.empty_initial_pass {
        s.params.initial_pass_soft = false;
    }
    let result = a.solver.run(&s)?;
    let out = a
        .out
        .unwrap_or_else(|| bench::default_out_dir().join(format!("{}.solution.json", stem(&a.scenario))));
    export_solution(&result, create(&out)?)?;
    println!(
        "{:?}: {} agents, flowtime {:.2} s, {} repair iterations, {} expansions, {:.2} s -> {}",
        result.status,
        result.paths.len(),
        result.flowtime,
        result.iterations,
        result.expanded_nodes,
        result.wall_time,
        out.display()
    );
    Ok(if result.status == SolveStatus::Success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let s = match &a.city_map {
        Some(path) => {
            let mut map = load_city_map(open(path)?).with_context(|| format!("invalid city map {}", path.display()))?;
            for w in &map.warnings {
                log::warn!("{w}");
            }
            let fleet = map.generate_fleet(a.agents, a.seed)?;
            if a.nfzs > 0 {
                map.nfzs.extend(map.generate_nfzs(a.nfzs, a.seed));
            }
            let params = preflight::SolverParams {
                seed: a.seed,
                ..Default::default()
            };
            map.into_scenario(fleet, params)?
        }
        None => {
            generate_scenario(a.dims, a.density, a.agents, a.nfzs, a.seed)?
        }
    };
    save_scenario(&s, create(&a.out)?)?;
    println!(
        "{} agents, {} obstacles, {} no-fly zones -> {}",
        s.fleet.len(),
        s.grid.obstacle_count(),
        s.nfzs.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode> {
    let s = read_scenario(&a.scenario)?;
    let sol = load_solution(open(&a.solution)?).with_context(|| format!("invalid solution {}", a.solution.display()))?;
    let report = validate_solution(&s, &sol.trajectories(), a.dt)?;
    if let Some(path) = &a.report {
        serde_json::to_writer_pretty(create(path)?, &report)?;
    }
    for v in report.violations.iter().take(20) {
        println!("{}", serde_json::to_string(v)?);
    }
    if report.violations.len() > 20 {
        println!("... {} more", report.violations.len() - 20);
    }
    if report.is_valid() {
        println!("valid: {} paths, {} samples at dt={}", sol.paths.len(), report.samples, a.dt);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("invalid: {} violations", report.violations.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = SuiteConfig::load(open(&a.config)?)?;
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let csv = a
        .csv
        .unwrap_or_else(|| bench::default_out_dir().join(format!("{}.csv", cfg.name)));
    let rows = bench::run_suite(&cfg, &csv, a.artifacts.as_deref(), a.jobs)?;
    print!("{}", bench::format_summary(&bench::summarize_rows(&rows, cfg.time_limit)));
    println!("{} rows appended to {}", rows.len(), csv.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_summarize(a: SummarizeArgs) -> Result<ExitCode> {
    let rows = bench::summarize(open(&a.csv)?, a.time_limit)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", bench::format_summary(&rows));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Summarize(a) => cmd_summarize(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
