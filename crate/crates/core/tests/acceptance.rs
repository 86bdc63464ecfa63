//! Acceptance run: every criterion prints one PASS/FAIL line, and the
//! process exits nonzero if any fails. Set `PREFLIGHT_ACCEPTANCE=1,3,7` to
//! run a subset.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use preflight::bench::{run_one, summarize_rows, BenchRow, RunSpec, SolverKind, SummaryRow};
use preflight::geometry::{count_conflicts, count_conflicts_exhaustive, min_separation, MotionSegment, SoftIndex};
use preflight::scenario::export_solution;
use preflight::sfi::build_sfi_table;
use preflight::sfippst::{plan, LegRequest, PlannerConfig, SearchStats};
use preflight::{
    generate_scenario, solve, solve_pp_baseline, validate_solution, ConflictMode, Pruning, Scenario, SolveResult,
    SolveStatus,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Solver runs shared between criteria (the runs are deterministic apart
/// from wall time).
#[derive(Default)]
struct Runs {
    cache: HashMap<String, (BenchRow, SolveResult)>,
}

impl Runs {
    fn get(&mut self, spec: &RunSpec) -> &(BenchRow, SolveResult) {
        let key = format!("{spec:?}");
        self.cache.entry(key).or_insert_with(|| {
            let t = Instant::now();
            let run = run_one(spec, None).expect("bench run");
            eprintln!(
                "    {} {} pruning={}: {:?} in {:.1} s",
                spec.scenario_id(),
                spec.solver,
                spec.pruning,
                run.0.status,
                t.elapsed().as_secs_f64()
            );
            run
        })
    }
}

fn spec(dims: [u32; 3], agents: usize, nfz_count: usize, seed: u64, solver: SolverKind, pruning: bool, time_limit: f64) -> RunSpec {
    RunSpec {
        dims,
        agents,
        density: 0.05,
        nfz_count,
        seed,
        solver,
        pruning,
        time_limit,
        neighborhood_size: None,
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn validator_cleanliness() -> Outcome {
    let mut solved = 0;
    let mut dirty = Vec::new();
    for seed in 1..=20 {
        let s = generate_scenario([50, 50, 10], 0.05, 20, 2, seed).unwrap();
        let r = solve(&s).unwrap();
        if r.status != SolveStatus::Success {
            continue;
        }
        solved += 1;
        let report = validate_solution(&s, &r.paths, 0.01).unwrap();
        if !report.is_valid() {
            dirty.push((seed, report.violations.len()));
        }
    }
    outcome(
        dirty.is_empty() && solved > 0,
        format!("{solved}/20 solved, violations in {dirty:?}"),
    )
}

fn single_leg(s: &Scenario, pruning: Pruning) -> Option<f64> {
    let p = &s.fleet[0];
    let table = build_sfi_table(&s.grid, &s.nfzs, &[p.hub, p.delivery]).unwrap();
    let cfg = PlannerConfig {
        pruning,
        ..Default::default()
    };
    let req = LegRequest {
        start: p.hub,
        goal: p.delivery,
        depart_not_before: p.t_init,
        hold_at_goal: 0.0,
    };
    let soft = SoftIndex::new(s.params.gamma);
    plan(&s.grid, &table, p, &req, &soft, &cfg, &mut SearchStats::default())
        .ok()
        .map(|leg| {
            assert_eq!(leg.conflicts, 0);
            leg.arrival()
        })
}

fn optimality() -> Outcome {
    let mut worst = 0.0f64;
    let mut mismatches = Vec::new();
    for seed in 1..=50 {
        let s = generate_scenario([20, 20, 5], 0.05, 1, 0, seed).unwrap();
        let p = &s.fleet[0];
        let oracle = common::earliest_arrival(&s.grid, &[], &[p.hub, p.delivery], p.hub, p.delivery, p.speed, p.t_init);
        let dijkstra = common::shortest_distance(&s.grid, p.hub, p.delivery).map(|d| p.t_init + d / p.speed);
        let got = single_leg(&s, Pruning::Directional);
        match (got, oracle, dijkstra) {
            (Some(a), Some(o), Some(d)) => {
                let err = (a - o).abs().max((a - d).abs());
                worst = worst.max(err);
                if err > 1e-9 {
                    mismatches.push(seed);
                }
            }
            (None, None, None) => {}
            _ => mismatches.push(seed),
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("50 instances, max |arrival - oracle| = {worst:.2e} s, mismatches {mismatches:?}"),
    )
}

fn completeness_under_pruning() -> Outcome {
    let (mut both, mut neither, mut disagree, mut unequal) = (0, 0, Vec::new(), Vec::new());
    let mut literal_misses = 0;
    for seed in 0..100 {
        let w = common::world_in(seed, [20, 20, 20], 3, 3);
        let exempt = [w.start, w.goal];
        let table = build_sfi_table(&w.grid, &w.nfzs, &exempt).unwrap();
        let profile = preflight::UavProfile {
            id: preflight::UavId(0),
            hub: w.start,
            delivery: w.goal,
            t_init: w.t0.max(1e-3),
            speed: w.speed,
            radius: 0.5,
        };
        let req = LegRequest {
            start: w.start,
            goal: w.goal,
            depart_not_before: w.t0,
            hold_at_goal: 0.0,
        };
        let soft = SoftIndex::new(0.5);
        let run = |pruning| {
            let cfg = PlannerConfig {
                pruning,
                ..Default::default()
            };
            plan(&w.grid, &table, &profile, &req, &soft, &cfg, &mut SearchStats::default()).ok().map(|l| l.arrival())
        };
        let (pruned, full) = (run(Pruning::Directional), run(Pruning::Off));
        if full.is_some() && run(Pruning::Literal).is_none() {
            literal_misses += 1;
        }
        match (pruned, full) {
            (Some(a), Some(b)) => {
                both += 1;
                if (a - b).abs() > 1e-9 {
                    unequal.push(seed);
                }
            }
            (None, None) => neither += 1,
            _ => disagree.push(seed),
        }
    }
    outcome(
        disagree.is_empty() && unequal.is_empty(),
        format!(
            "{both} feasible, {neither} infeasible, feasibility mismatches {disagree:?}, arrival mismatches {unequal:?} \
             (literal pruning without deferral misses {literal_misses})"
        ),
    )
}

fn pruning_effectiveness(runs: &mut Runs) -> Outcome {
    let dims = [100, 100, 10];
    let (mut pruned, mut full, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    let (mut gen_p, mut gen_f, mut wall_p, mut wall_f) = (0u64, 0u64, 0.0, 0.0);
    let mut literal = Vec::new();
    for seed in 1..=10 {
        let p = runs.get(&spec(dims, 50, 0, seed, SolverKind::Dtapp, true, 300.0)).1.clone();
        let f = runs.get(&spec(dims, 50, 0, seed, SolverKind::Dtapp, false, 300.0)).1.clone();
        pruned.push(p.expanded_nodes as f64);
        full.push(f.expanded_nodes as f64);
        ratios.push(p.expanded_nodes as f64 / f.expanded_nodes as f64);
        gen_p += p.search.generated;
        gen_f += f.search.generated;
        wall_p += p.wall_time;
        wall_f += f.wall_time;
        let mut s = spec(dims, 50, 0, seed, SolverKind::Dtapp, true, 300.0).scenario().unwrap();
        s.params.pruning = Pruning::Literal;
        let l = solve(&s).unwrap();
        literal.push(l.expanded_nodes as f64 / f.expanded_nodes as f64);
    }
    let ratio = median(&mut pruned) / median(&mut full);
    outcome(
        ratio <= 0.75,
        format!(
            "median expansions pruned/full = {ratio:.3} (need <= 0.75); median per-instance ratio {:.3}; \
             generated nodes ratio {:.3}; wall time ratio {:.3}; literal pruning median ratio {:.3}",
            median(&mut ratios),
            gen_p as f64 / gen_f as f64,
            wall_p / wall_f,
            median(&mut literal)
        ),
    )
}

fn group(rows: &[SummaryRow], solver: SolverKind, agents: usize, nfz_count: usize) -> &SummaryRow {
    rows.iter()
        .find(|r| r.solver == solver && r.agents == agents && r.nfz_count == nfz_count)
        .expect("summary group")
}

fn scalability(runs: &mut Runs) -> Outcome {
    let mut rows = Vec::new();
    for n in [10, 50, 100] {
        for seed in 1..=10 {
            for solver in [SolverKind::Dtapp, SolverKind::Pp] {
                rows.push(runs.get(&spec([100, 100, 10], n, 0, seed, solver, true, 300.0)).0.clone());
            }
        }
    }
    let summary = summarize_rows(&rows, 300.0);
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [10, 50, 100] {
        let d = group(&summary, SolverKind::Dtapp, n, 0);
        let p = group(&summary, SolverKind::Pp, n, 0);
        if n <= 50 && d.success_rate < 100.0 {
            pass = false;
        }
        if d.success_rate < p.success_rate {
            pass = false;
        }
        if n == 100 && d.mean_runtime >= p.mean_runtime {
            pass = false;
        }
        detail.push(format!(
            "N={n}: dtapp {:.0}% {:.1} s, pp {:.0}% {:.1} s",
            d.success_rate, d.mean_runtime, p.success_rate, p.mean_runtime
        ));
    }
    outcome(pass, detail.join("; "))
}

fn nfz_robustness(runs: &mut Runs) -> Outcome {
    let mut rows = Vec::new();
    for z in [0, 2, 4] {
        for seed in 1..=10 {
            rows.push(runs.get(&spec([100, 100, 10], 50, z, seed, SolverKind::Dtapp, true, 500.0)).0.clone());
        }
    }
    let summary = summarize_rows(&rows, 500.0);
    let [z0, z2, z4] = [0, 2, 4].map(|z| group(&summary, SolverKind::Dtapp, 50, z));
    let pass = z4.success_rate >= 90.0 && z0.mean_runtime <= z2.mean_runtime && z2.mean_runtime <= z4.mean_runtime;
    outcome(
        pass,
        format!(
            "success {:.0}/{:.0}/{:.0}%, mean runtime {:.2}/{:.2}/{:.2} s at 0/2/4 zones",
            z0.success_rate, z2.success_rate, z4.success_rate, z0.mean_runtime, z2.mean_runtime, z4.mean_runtime
        ),
    )
}

fn random_segment(rng: &mut ChaCha8Rng) -> MotionSegment {
    let from: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..8.0));
    let speed = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(1.0..5.0) };
    let dir: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    let t0 = rng.gen_range(0.0..5.0);
    let dur = rng.gen_range(0.2..4.0);
    let to = std::array::from_fn(|k| from[k] + dir[k] / norm * speed * dur);
    MotionSegment::new(from, to, t0, t0 + dur)
}

fn sampled_separation(a: &MotionSegment, b: &MotionSegment, dt: f64) -> Option<f64> {
    let lo = a.t0.max(b.t0);
    let hi = a.t1.min(b.t1);
    if lo > hi {
        return None;
    }
    let dist = |t: f64| {
        let (p, q) = (a.position(t), b.position(t));
        (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt()
    };
    let steps = ((hi - lo) / dt).floor() as u64;
    let inner = (0..=steps).map(|k| dist(lo + k as f64 * dt)).fold(f64::INFINITY, f64::min);
    Some(inner.min(dist(hi)))
}

fn conflict_detection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut overlapping, mut worst, mut bad) = (0, 0.0f64, 0);
    for _ in 0..1000 {
        let (a, b) = (random_segment(&mut rng), random_segment(&mut rng));
        match (min_separation(&a, &b), sampled_separation(&a, &b, 0.001)) {
            (Some((d, _)), Some(s)) => {
                overlapping += 1;
                worst = worst.max((d - s).abs());
                if (d - s).abs() > 1e-3 {
                    bad += 1;
                }
            }
            (None, None) => {}
            _ => bad += 1,
        }
    }
    let mut graph_mismatches = Vec::new();
    let mut edges = 0;
    for seed in 1..=20 {
        let mut s = generate_scenario([20, 20, 6], 0.05, 20, 0, seed).unwrap();
        s.params.initial_pass_soft = false;
        s.params.max_iterations = Some(0);
        let r = solve(&s).unwrap();
        let broad = count_conflicts(&r.paths, s.params.gamma);
        edges += broad.edge_count();
        if broad != count_conflicts_exhaustive(&r.paths, s.params.gamma) {
            graph_mismatches.push(seed);
        }
    }
    outcome(
        bad == 0 && graph_mismatches.is_empty() && edges > 0,
        format!(
            "{overlapping}/1000 pairs overlap in time, max |analytic - sampled| = {worst:.2e} m, {bad} mismatches; \
             {edges} conflict edges over 20 solutions, graph mismatches {graph_mismatches:?}"
        ),
    )
}

fn solution_bytes(r: &SolveResult) -> Vec<u8> {
    let mut buf = Vec::new();
    export_solution(r, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_time\""))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

fn determinism() -> Outcome {
    let base = generate_scenario([30, 30, 6], 0.05, 15, 2, 42).unwrap();
    let mut variants = 0;
    let mut differing = Vec::new();
    for solver in [SolverKind::Dtapp, SolverKind::Pp] {
        for pruning in [Pruning::Off, Pruning::Directional, Pruning::Literal] {
            for soft_mode in [ConflictMode::Soft, ConflictMode::Hard] {
                for initial_pass_soft in [true, false] {
                    let mut s = base.clone();
                    s.params.pruning = pruning;
                    s.params.soft_mode = soft_mode;
                    s.params.initial_pass_soft = initial_pass_soft;
                    s.params.max_iterations = Some(200);
                    let go = |s: &Scenario| match solver {
                        SolverKind::Dtapp => solve(s).unwrap(),
                        SolverKind::Pp => solve_pp_baseline(s).unwrap(),
                    };
                    variants += 1;
                    if solution_bytes(&go(&s)) != solution_bytes(&go(&s)) {
                        differing.push(format!("{solver}/{pruning:?}/{soft_mode:?}/{initial_pass_soft}"));
                    }
                }
            }
        }
    }
    outcome(differing.is_empty(), format!("{variants} variants, differing {differing:?}"))
}

type Criterion = Box<dyn FnOnce(&mut Runs) -> Outcome>;

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("PREFLIGHT_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: u32| selected.as_ref().is_none_or(|s| s.contains(&i));
    let mut runs = Runs::default();
    let mut failed = 0;
    let criteria: Vec<(u32, &str, Criterion)> = vec![
        (1, "validator cleanliness", Box::new(|_| validator_cleanliness())),
        (2, "optimality", Box::new(|_| optimality())),
        (3, "completeness under pruning", Box::new(|_| completeness_under_pruning())),
        (4, "pruning effectiveness", Box::new(pruning_effectiveness)),
        (5, "scalability trend", Box::new(scalability)),
        (6, "NFZ robustness", Box::new(nfz_robustness)),
        (7, "conflict detection oracle", Box::new(|_| conflict_detection())),
        (8, "determinism", Box::new(|_| determinism())),
    ];
    for (i, name, check) in criteria {
        if !wanted(i) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut runs);
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {i} ({name}): {} [{:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
