//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ehsense::belief::stationary_belief;
use ehsense::policy::{
    check_row_structure, extract_policy, extract_thresholds, greedy_policy, opportunistic_policy, runs,
    single_threshold_policy,
};
use ehsense::search::search_thresholds;
use ehsense::sim::{run_episodes, ThroughputStats};
use ehsense::solver::solve;
use ehsense::verify::{
    check_good_state_dominance, check_threshold_structure, check_value_properties, compare_with_solver,
    staircase_profile, ROW_STRUCTURE, THRESHOLD_COUNT,
};
use ehsense::{Action, PolicyTable, SystemParams, ThresholdPolicy, ValueTable};
use ehsense_cli::config::SweepPoint;
use ehsense_cli::{cmd_simulate, ExperimentConfig, Options};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn solved(config: &ExperimentConfig, pt: &SweepPoint) -> ValueTable {
    solve(&pt.params, config.grid(), &config.solver_config(&pt.params)).expect("value iteration converges")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64, detail: String) -> Outcome {
    check(
        elapsed < Duration::from_secs(limit_s),
        format!("{detail}; {:.1} s of {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let c = config("small.toml");
    let pt = &c.points().unwrap()[0];
    let p = &pt.params;
    let grid = c.grid();
    let p0 = stationary_belief(p).unwrap();
    let mut worst = f64::INFINITY;
    let mut states = 0;
    for n in 1..=8 {
        let r = compare_with_solver(p, grid, n, p0).map_err(|e| e.to_string())?;
        let tol = 10.0 * grid.step() * n as f64 * p.r_high();
        for &(b, x, exact, approx) in &r.values {
            let margin = tol - (exact - approx).abs();
            if margin < 0.0 {
                return Err(format!(
                    "n = {n}, b = {b}, p = {x}: exact {exact}, solver {approx}, tolerance {tol}"
                ));
            }
            worst = worst.min(margin);
        }
        states += r.values.len();
    }
    within(
        start.elapsed(),
        10,
        format!("{states} comparisons, smallest margin {worst:.3e}"),
    )
}

struct SingleRate {
    params: SystemParams,
    table: ValueTable,
    policy: PolicyTable,
    solve_time: Duration,
}

fn single_rate() -> SingleRate {
    let start = Instant::now();
    let c = config("single_rate.toml");
    let pt = c.points().unwrap().remove(0);
    let table = solved(&c, &pt);
    let policy = extract_policy(&table, &pt.params).unwrap();
    SingleRate {
        params: pt.params,
        table,
        policy,
        solve_time: start.elapsed(),
    }
}

fn value_properties(f: &SingleRate) -> Outcome {
    let start = Instant::now();
    let report = check_value_properties(&f.table, &f.params);
    let detail = report
        .checks
        .iter()
        .map(|c| {
            let at = c.at.map(|(b, p)| format!(" at b={b} p={p}")).unwrap_or_default();
            format!(
                "{} {} worst {:.3e}{at}",
                if c.passed { "ok" } else { "FAILED" },
                c.name,
                c.worst.unwrap_or(0.0)
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let detail = format!("{detail}; solve {} iterations", f.table.iterations());
    if !report.passed() {
        return Err(detail);
    }
    within(f.solve_time + start.elapsed(), 60, detail)
}

fn dominance(f: &SingleRate) -> Outcome {
    let report = check_good_state_dominance(&f.table, &f.params, 0.05, 1e-6).map_err(|e| e.to_string())?;
    let detail = report
        .checks
        .iter()
        .map(|c| {
            let (b, p) = c.at.unwrap_or((0, f64::NAN));
            format!("{}: margin {:.3e} at b={b} p={p}", c.name, c.worst.unwrap_or(0.0))
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(report.passed(), detail)
}

fn single_rate_structure(f: &SingleRate) -> Outcome {
    let report = check_threshold_structure(&f.policy, &f.params);
    for name in [ROW_STRUCTURE, THRESHOLD_COUNT] {
        let c = report.get(name).unwrap();
        if !c.passed {
            return Err(format!("{name}: {}", c.detail));
        }
    }
    let row = f.policy.row(20);
    let r = runs(row);
    let actions: Vec<Action> = r.iter().map(|r| r.action).collect();
    if actions != [Action::Defer, Action::HighRate] {
        return Err(format!("b = 20 row runs {actions:?}"));
    }
    let grid = f.policy.grid();
    let breakpoint = 0.5 * (grid.point(r[0].last) + grid.point(r[1].first));
    check(
        (breakpoint - 0.8).abs() <= 0.05,
        format!("all rows match; b = 20 is D then H with breakpoint {breakpoint:.4}"),
    )
}

fn staircase(f: &SingleRate) -> Outcome {
    let pi = stationary_belief(&f.params).unwrap();
    let (jump, step) = staircase_profile(&f.table, &f.params, pi, 5);
    check(
        jump > 3.0 * step,
        format!(
            "p* = {pi:.4}: mean jump {jump:.4}, mean within-band step {step:.4}, ratio {:.1}",
            jump / step
        ),
    )
}

fn cell_counts(name: &str, pred: fn(Action) -> bool) -> Vec<(String, usize)> {
    let c = config(name);
    c.points()
        .unwrap()
        .par_iter()
        .map(|pt| {
            let policy = extract_policy(&solved(&c, pt), &pt.params).unwrap();
            (pt.label(), policy.count(pred))
        })
        .collect()
}

fn region_sensitivity() -> Outcome {
    let h = cell_counts("harvest_rate.toml", |a| a == Action::HighRate);
    let get = |v: &[(String, usize)], l: &str| v.iter().find(|(k, _)| k == l).unwrap().1;
    let (h8, h2) = (get(&h, "q0.8_tau0.1"), get(&h, "q0.2_tau0.1"));
    let s = cell_counts("sensing_cost.toml", Action::senses);
    let (s2, s3) = (get(&s, "q0.8_tau0.2"), get(&s, "q0.8_tau0.3"));
    check(
        h8 > h2 && s2 > s3,
        format!("H cells q=0.8 {h8} vs q=0.2 {h2}; sensing cells tau=0.2 {s2} vs tau=0.3 {s3}"),
    )
}

struct SweepResult {
    pt: SweepPoint,
    optimal: ThroughputStats,
    single: ThroughputStats,
    greedy: ThroughputStats,
    opportunistic: ThroughputStats,
    table: PolicyTable,
}

fn throughput_sweep(c: &ExperimentConfig) -> Vec<SweepResult> {
    let sim = &c.simulation;
    let points = c.points().unwrap();
    // never senses, so one solve per q serves every tau
    let first_tau = points[0].tau;
    let singles: Vec<(f64, ThresholdPolicy)> = points
        .par_iter()
        .filter(|pt| pt.tau == first_tau)
        .map(|pt| {
            let p = &pt.params;
            (
                pt.q,
                single_threshold_policy(p, c.grid(), c.solver.tol, c.max_iter(p)).unwrap(),
            )
        })
        .collect();
    points
        .into_par_iter()
        .map(|pt| {
            let p = &pt.params;
            let init = c.initial_conditions(p).unwrap();
            let eval = |policy: &dyn ehsense::Policy| {
                run_episodes(policy, p, sim.episodes, sim.horizon, sim.seed, &init).unwrap()
            };
            let table = extract_policy(&solved(c, &pt), p).unwrap();
            let single = &singles.iter().find(|(q, _)| *q == pt.q).unwrap().1;
            SweepResult {
                optimal: eval(&table),
                single: eval(single),
                greedy: eval(&greedy_policy(p)),
                opportunistic: eval(&opportunistic_policy(p)),
                table,
                pt,
            }
        })
        .collect()
}

fn combined(a: &ThroughputStats, b: &ThroughputStats) -> f64 {
    a.std_error.hypot(b.std_error)
}

fn throughput_ordering(points: &[SweepResult], elapsed: Duration) -> Outcome {
    let mut problems = Vec::new();
    let mut rows = Vec::new();
    for f in points {
        let (o, s, g, op) = (&f.optimal, &f.single, &f.greedy, &f.opportunistic);
        let l = f.pt.label();
        rows.push(format!("{l} {:.4}/{:.4}/{:.4}/{:.4}", o.mean, s.mean, g.mean, op.mean));
        if o.mean < s.mean - 2.0 * combined(o, s) {
            problems.push(format!("{l}: optimal below single-threshold"));
        }
        if s.mean < g.mean - 2.0 * combined(s, g) {
            problems.push(format!("{l}: single-threshold below greedy"));
        }
        if (f.pt.tau - 0.2).abs() < 1e-12 {
            if op.mean >= s.mean {
                problems.push(format!("{l}: opportunistic not below single-threshold"));
            }
            if (f.pt.q - 0.9).abs() < 1e-12 && op.mean >= g.mean {
                problems.push(format!("{l}: opportunistic not below greedy"));
            }
        }
    }
    let detail = format!("optimal/single/greedy/opportunistic: {}", rows.join(", "));
    if !problems.is_empty() {
        return Err(format!("{}; {detail}", problems.join("; ")));
    }
    within(elapsed, 300, detail)
}

fn policy_search(c: &ExperimentConfig, points: &[SweepResult]) -> Outcome {
    let sim = &c.simulation;
    let results: Vec<Result<String, String>> = points
        .par_iter()
        .filter(|f| (f.pt.tau - 0.1).abs() < 1e-12)
        .map(|f| {
            let p = &f.pt.params;
            let init = c.initial_conditions(p).unwrap();
            let start = extract_thresholds(&f.table, p).map_err(|e| e.to_string())?;
            let outcome = search_thresholds(p, &c.search_config_for(p).unwrap(), &start).map_err(|e| e.to_string())?;
            let vi = run_episodes(&start, p, sim.episodes, sim.horizon, sim.seed, &init).unwrap();
            let found = run_episodes(&outcome.policy, p, sim.episodes, sim.horizon, sim.seed, &init).unwrap();
            let floor = vi.mean.max(f.optimal.mean) - vi.std_error;
            let line = format!(
                "q={} search {:.5} vs value iteration {:.5} (table {:.5}, SE {:.5})",
                f.pt.q, found.mean, vi.mean, f.optimal.mean, vi.std_error
            );
            check(found.mean >= floor, line)
        })
        .collect();
    let ok = results.iter().all(Result::is_ok);
    let detail = results
        .into_iter()
        .map(|r| r.unwrap_or_else(|e| e))
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn determinism() -> Outcome {
    let c = config("small.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        let opts = Options {
            out: d.path().to_path_buf(),
            quiet: true,
        };
        let files = cmd_simulate(&c, &opts).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(&files[0]).unwrap());
    }
    check(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!("throughput.csv, {} bytes, identical across runs", outputs[0].len()),
    )
}

fn general_structure() -> Outcome {
    let c = config("five_actions.toml");
    let pt = &c.points().unwrap()[0];
    let p = &pt.params;
    let policy = extract_policy(&solved(&c, pt), p).unwrap();
    let mut most = 0;
    let mut fragmented = 0;
    for b in 0..=p.b_max() {
        let cleaned = check_row_structure(policy.row(b), b, p).map_err(|e| e.to_string())?;
        most = most.max(cleaned.len() - 1);
        let raw = runs(policy.row(b));
        let count = |a: Action| raw.iter().filter(|r| r.action == a).count();
        if count(Action::Defer) > 1 || count(Action::LowRate) > 1 {
            fragmented += 1;
        }
    }
    let report = check_threshold_structure(&policy, p);
    check(
        report.passed() && most <= 3,
        format!("H suffix and single OD/OT runs in all rows; at most {most} thresholds; {fragmented} rows with split D or L"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{n}] {name}: {detail}");
    };

    report(1, "oracle equivalence", oracle());
    let f = single_rate();
    report(2, "value function properties", value_properties(&f));
    report(3, "sense-then-transmit dominance", dominance(&f));
    report(4, "single-rate threshold structure", single_rate_structure(&f));
    report(5, "staircase value function", staircase(&f));
    report(6, "region sensitivity", region_sensitivity());
    let c6 = config("throughput.toml");
    let start = Instant::now();
    let points = throughput_sweep(&c6);
    report(7, "throughput ordering", throughput_ordering(&points, start.elapsed()));
    report(8, "policy search", policy_search(&c6, &points));
    report(9, "determinism", determinism());
    report(10, "general-case structure", general_structure());

    println!("{} of 10 criteria failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
