//! The five subcommands. Each runs its sweep points in parallel and writes
//! one file per point, plus any combined CSV in sweep order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ehsense::policy::{
    extract_policy, extract_thresholds, greedy_policy, opportunistic_policy, single_threshold_policy,
};
use ehsense::search::search_thresholds;
use ehsense::sim::{run_episodes, ThroughputStats};
use ehsense::solver::solve;
use ehsense::verify::{
    check_good_state_dominance, check_threshold_structure, check_value_properties, compare_with_solver, Check, Report,
};
use ehsense::{belief::stationary_belief, Error, Policy, PolicyTable, SystemParams, ThresholdPolicy, ValueTable};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepPoint};
use crate::CliError;

/// Where to write and how much to print.
#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub quiet: bool,
}

impl Options {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn model_error(e: Error) -> CliError {
    match e {
        Error::NonConvergence { iterations, residual } => CliError::NonConvergence {
            label: String::new(),
            iterations,
            residual,
        },
        Error::StructureViolation { .. } => CliError::Verification(e.to_string()),
        e => CliError::Validation(e.to_string()),
    }
}

/// Writes `# config-hash: ...` and then `body`.
fn write_tagged(
    path: &Path,
    hash: &str,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<PathBuf, CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "# config-hash: {hash}")?;
    body(&mut buf)?;
    fs::write(path, buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn prepare(config: &ExperimentConfig, opts: &Options) -> Result<(Vec<SweepPoint>, String), CliError> {
    config.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| CliError::Io(format!("{}: {e}", opts.out.display())))?;
    Ok((config.points()?, config.hash()))
}

fn solve_point(config: &ExperimentConfig, point: &SweepPoint, opts: &Options) -> Result<ValueTable, CliError> {
    let table =
        solve(&point.params, config.grid(), &config.solver_config(&point.params)).map_err(|e| {
            match model_error(e) {
                CliError::NonConvergence {
                    iterations, residual, ..
                } => CliError::NonConvergence {
                    label: point.label(),
                    iterations,
                    residual,
                },
                e => e,
            }
        })?;
    opts.say(format!(
        "{}: converged in {} iterations, residual {:e}",
        point.label(),
        table.iterations(),
        table.residual()
    ));
    Ok(table)
}

fn par_points<T: Send>(
    points: &[SweepPoint],
    job: impl Fn(&SweepPoint) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    points.par_iter().map(&job).collect()
}

/// Value table, policy regions and threshold list for every sweep point.
pub fn cmd_solve(config: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let (points, hash) = prepare(config, opts)?;
    let files = par_points(&points, |pt| {
        let table = solve_point(config, pt, opts)?;
        let policy = extract_policy(&table, &pt.params).map_err(model_error)?;
        let thresholds = extract_thresholds(&policy, &pt.params).map_err(model_error)?;
        let label = pt.label();
        Ok(vec![
            write_tagged(&opts.out.join(format!("values_{label}.csv")), &hash, |w| {
                table.write_csv(w)
            })?,
            write_tagged(&opts.out.join(format!("regions_{label}.csv")), &hash, |w| {
                policy.write_csv(w)
            })?,
            write_tagged(&opts.out.join(format!("thresholds_{label}.txt")), &hash, |w| {
                w.write_all(thresholds.to_text(pt.params.is_single_rate()).as_bytes())
            })?,
        ])
    })?;
    Ok(files.concat())
}

/// All sweep points' policy regions in one long-format CSV.
pub fn cmd_export_regions(config: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let (points, hash) = prepare(config, opts)?;
    let policies = par_points(&points, |pt| {
        let table = solve_point(config, pt, opts)?;
        extract_policy(&table, &pt.params).map_err(model_error)
    })?;
    let path = write_tagged(&opts.out.join("regions.csv"), &hash, |w| {
        writeln!(w, "q,tau,battery,belief,action")?;
        for (pt, policy) in points.iter().zip(&policies) {
            let grid = policy.grid();
            for b in 0..=policy.b_max() {
                for (i, p) in grid.points().enumerate() {
                    writeln!(w, "{},{},{b},{p},{}", pt.q, pt.tau, policy.get(b, i).code())?;
                }
            }
        }
        Ok(())
    })?;
    Ok(vec![path])
}

enum Built {
    Table(PolicyTable),
    Thresholds(ThresholdPolicy),
    Greedy(ehsense::policy::Greedy),
    Opportunistic(ehsense::policy::Opportunistic),
}

impl Built {
    fn as_policy(&self) -> &dyn Policy {
        match self {
            Built::Table(p) => p,
            Built::Thresholds(p) => p,
            Built::Greedy(p) => p,
            Built::Opportunistic(p) => p,
        }
    }
}

fn load_thresholds(path: &Path, params: &SystemParams) -> Result<ThresholdPolicy, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
    let policy =
        ThresholdPolicy::from_text(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if policy.b_max() != params.b_max() || !policy.is_feasible(params) {
        return Err(CliError::Validation(format!(
            "{}: policy does not fit the model (rows for b = 0..={}, some actions may be infeasible)",
            path.display(),
            policy.b_max()
        )));
    }
    Ok(policy)
}

fn build_policy(name: &str, config: &ExperimentConfig, pt: &SweepPoint, opts: &Options) -> Result<Built, CliError> {
    let params = &pt.params;
    Ok(match name {
        "optimal" => {
            let table = solve_point(config, pt, opts)?;
            Built::Table(extract_policy(&table, params).map_err(model_error)?)
        }
        "single-threshold" => Built::Thresholds(
            single_threshold_policy(params, config.grid(), config.solver.tol, config.max_iter(params)).map_err(
                |e| match model_error(e) {
                    CliError::NonConvergence {
                        iterations, residual, ..
                    } => CliError::NonConvergence {
                        label: format!("{} single-threshold", pt.label()),
                        iterations,
                        residual,
                    },
                    e => e,
                },
            )?,
        ),
        "greedy" => Built::Greedy(greedy_policy(params)),
        "opportunistic" => Built::Opportunistic(opportunistic_policy(params)),
        file => Built::Thresholds(load_thresholds(Path::new(&file["file:".len()..]), params)?),
    })
}

/// Column value naming a policy; file policies go by file stem.
fn policy_label(name: &str) -> String {
    match name.strip_prefix("file:") {
        Some(path) => Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().replace(',', "_"))
            .unwrap_or_else(|| "file".into()),
        None => name.to_string(),
    }
}

/// Average throughput of every configured policy at every sweep point, one
/// row each, in `throughput.csv`.
pub fn cmd_simulate(config: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let (points, hash) = prepare(config, opts)?;
    let sim = &config.simulation;
    let rows = par_points(&points, |pt| {
        let init = config.initial_conditions(&pt.params)?;
        let mut rows = Vec::new();
        for name in &sim.policies {
            let policy = build_policy(name, config, pt, opts)?;
            let stats = run_episodes(
                policy.as_policy(),
                &pt.params,
                sim.episodes,
                sim.horizon,
                sim.seed,
                &init,
            )
            .map_err(model_error)?;
            opts.say(format!(
                "{} {name}: {:.6} +- {:.6}",
                pt.label(),
                stats.mean,
                stats.std_error
            ));
            rows.push(stats.csv_row(&policy_label(name), pt.q, pt.tau));
        }
        Ok(rows)
    })?;
    let path = write_tagged(&opts.out.join("throughput.csv"), &hash, |w| {
        writeln!(w, "{}", ThroughputStats::CSV_HEADER)?;
        for row in rows.concat() {
            writeln!(w, "{row}")?;
        }
        Ok(())
    })?;
    Ok(vec![path])
}

/// Threshold search from the value-iteration policy (or `search.init`).
/// Writes the final thresholds and search log per point, and `search.csv`
/// comparing start and result on the simulation draws.
pub fn cmd_search(config: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let (points, hash) = prepare(config, opts)?;
    if let Some(pt) = points.iter().find(|pt| !pt.params.is_single_rate()) {
        return Err(CliError::Validation(format!(
            "{}: threshold search needs r_low = 0",
            pt.label()
        )));
    }
    let sim = &config.simulation;
    let results = par_points(&points, |pt| {
        let params = &pt.params;
        let init_policy = match &config.search.init {
            Some(path) => load_thresholds(path, params)?,
            None => {
                let table = solve_point(config, pt, opts)?;
                let policy = extract_policy(&table, params).map_err(model_error)?;
                extract_thresholds(&policy, params).map_err(model_error)?
            }
        };
        let search = config.search_config_for(params)?;
        let outcome = search_thresholds(params, &search, &init_policy).map_err(|e| match e {
            Error::InvalidParams(_) | Error::StructureViolation { .. } => {
                CliError::Validation(format!("{}: initial policy: {e}", pt.label()))
            }
            e => model_error(e),
        })?;
        let init = config.initial_conditions(params)?;
        let eval =
            |p: &dyn Policy| run_episodes(p, params, sim.episodes, sim.horizon, sim.seed, &init).map_err(model_error);
        let before = eval(&init_policy)?;
        let after = eval(&outcome.policy)?;
        opts.say(format!(
            "{}: {} passes, search sample {:.6} -> {:.6}, evaluation {:.6} -> {:.6}",
            pt.label(),
            outcome.passes,
            outcome.initial_stats.mean,
            outcome.stats.mean,
            before.mean,
            after.mean
        ));
        let label = pt.label();
        let files = vec![
            write_tagged(&opts.out.join(format!("search_policy_{label}.txt")), &hash, |w| {
                w.write_all(outcome.policy.to_text(true).as_bytes())
            })?,
            write_tagged(&opts.out.join(format!("search_log_{label}.csv")), &hash, |w| {
                outcome.write_log_csv(w)
            })?,
        ];
        let rows = vec![
            before.csv_row("value-iteration", pt.q, pt.tau),
            after.csv_row("search", pt.q, pt.tau),
        ];
        Ok((files, rows))
    })?;
    let (mut files, rows): (Vec<Vec<PathBuf>>, Vec<Vec<String>>) = results.into_iter().unzip();
    files.push(vec![write_tagged(&opts.out.join("search.csv"), &hash, |w| {
        writeln!(w, "{}", ThroughputStats::CSV_HEADER)?;
        for row in rows.concat() {
            writeln!(w, "{row}")?;
        }
        Ok(())
    })?]);
    Ok(files.concat())
}

pub const ORACLE_AGREEMENT: &str = "oracle agreement";

/// Grid solver against the exact oracle for horizons `1..=n`, with tolerance
/// `10 * grid step * n * r_high` at horizon `n`. `None` when the instance is
/// too large for the oracle.
pub fn oracle_check(config: &ExperimentConfig, params: &SystemParams) -> Result<Option<Check>, CliError> {
    let grid = config.grid();
    let p0 = stationary_belief(params).map_err(model_error)?;
    let mut worst = f64::INFINITY;
    let mut at = None;
    let mut states = 0;
    for n in 1..=config.verify.oracle_horizon {
        let result = match compare_with_solver(params, grid, n, p0) {
            Ok(r) => r,
            Err(Error::InstanceTooLarge(_)) => return Ok(None),
            Err(e) => return Err(model_error(e)),
        };
        let tol = 10.0 * grid.step() * n as f64 * params.r_high();
        for &(b, p, exact, approx) in &result.values {
            let margin = tol - (exact - approx).abs();
            if margin < worst {
                worst = margin;
                at = Some((b, p));
            }
        }
        states += result.values.len();
    }
    Ok(Some(Check {
        name: ORACLE_AGREEMENT.into(),
        passed: worst >= 0.0,
        worst: Some(worst),
        at,
        detail: format!(
            "{states} comparisons over horizons 1..={}",
            config.verify.oracle_horizon
        ),
    }))
}

/// The configured checks at one sweep point.
pub fn verify_point(
    config: &ExperimentConfig,
    pt: &SweepPoint,
    opts: &Options,
) -> Result<(Report, Vec<String>), CliError> {
    let params = &pt.params;
    let wants = |c: &str| config.verify.checks.iter().any(|x| x == c);
    let mut report = Report::default();
    let mut notes = Vec::new();
    if wants("oracle") {
        match oracle_check(config, params)? {
            Some(c) => report.checks.push(c),
            None => notes.push(format!(
                "SKIP {ORACLE_AGREEMENT} (instance too large for the exact oracle)"
            )),
        }
    }
    if wants("values") || wants("dominance") || wants("structure") {
        let table = solve_point(config, pt, opts)?;
        if wants("values") {
            report.checks.extend(check_value_properties(&table, params).checks);
        }
        if wants("dominance") {
            let v = &config.verify;
            let dom = check_good_state_dominance(&table, params, v.dominance_min_belief, v.dominance_tol)
                .map_err(model_error)?;
            report.checks.extend(dom.checks);
        }
        if wants("structure") {
            let policy = extract_policy(&table, params).map_err(model_error)?;
            report.checks.extend(check_threshold_structure(&policy, params).checks);
        }
    }
    Ok((report, notes))
}

/// Runs the configured checks at every sweep point and writes a report per
/// point. Fails with exit code 3 if any check fails.
pub fn cmd_verify(config: &ExperimentConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let (points, hash) = prepare(config, opts)?;
    let reports = par_points(&points, |pt| verify_point(config, pt, opts))?;
    let mut files = Vec::new();
    let mut failed = Vec::new();
    for (pt, (report, notes)) in points.iter().zip(&reports) {
        let mut text = report.to_text();
        for n in notes {
            text.push_str(n);
            text.push('\n');
        }
        opts.say(format!("{}:\n{text}", pt.label()));
        files.push(write_tagged(
            &opts.out.join(format!("verify_{}.txt", pt.label())),
            &hash,
            |w| w.write_all(text.as_bytes()),
        )?);
        failed.extend(
            report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{} {}", pt.label(), c.name)),
        );
    }
    if !failed.is_empty() {
        return Err(CliError::Verification(failed.join("; ")));
    }
    Ok(files)
}
