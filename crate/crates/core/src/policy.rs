//! Policy representations: grid policies extracted from action-values,
//! per-battery threshold policies, and the greedy, single-threshold and
//! opportunistic baselines.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::belief::BeliefGrid;
use crate::error::{Error, Result};
use crate::model::{feasible_actions, Action, ActionSet, SystemParams};
use crate::solver::{bellman_step, solve, SolverConfig, ValueTable};

/// Action-values closer than this count as tied; ties go to the action that
/// comes later in `D < L < OD < OT < H`.
pub const TIE_TOL: f64 = 1e-12;

/// A stationary policy on `(battery, belief)`.
pub trait Policy: Sync {
    fn action(&self, battery: u32, belief: f64) -> Action;
}

impl<F> Policy for F
where
    F: Fn(u32, f64) -> Action + Sync,
{
    fn action(&self, battery: u32, belief: f64) -> Action {
        self(battery, belief)
    }
}

/// One action per grid state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    grid: BeliefGrid,
    b_max: u32,
    actions: Vec<Action>,
}

impl PolicyTable {
    pub fn grid(&self) -> BeliefGrid {
        self.grid
    }

    pub fn b_max(&self) -> u32 {
        self.b_max
    }

    pub fn get(&self, battery: u32, index: usize) -> Action {
        self.actions[battery as usize * self.grid.len() + index]
    }

    pub fn row(&self, battery: u32) -> &[Action] {
        let g = self.grid.len();
        &self.actions[battery as usize * g..(battery as usize + 1) * g]
    }

    /// Number of grid states whose action satisfies `pred`.
    pub fn count(&self, pred: impl Fn(Action) -> bool) -> usize {
        self.actions.iter().filter(|a| pred(**a)).count()
    }

    /// Region CSV: `battery,belief,action` with action codes D=0, L=1,
    /// OD=2, OT=3, H=4.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "battery,belief,action")?;
        for b in 0..=self.b_max {
            for (i, p) in self.grid.points().enumerate() {
                writeln!(out, "{b},{p},{}", self.get(b, i).code())?;
            }
        }
        Ok(())
    }
}

impl Policy for PolicyTable {
    fn action(&self, battery: u32, belief: f64) -> Action {
        self.get(battery, self.grid.nearest(belief))
    }
}

/// Greedy action per grid state.
///
/// Uses the action-values recorded by the sweep that produced `table`; a
/// table without them (built from raw values) gets one extra sweep.
pub fn extract_policy(table: &ValueTable, params: &SystemParams) -> Result<PolicyTable> {
    if table.b_max() != params.b_max() {
        return Err(Error::Shape(format!(
            "table has battery capacity {}, model has {}",
            table.b_max(),
            params.b_max()
        )));
    }
    let swept;
    let source = if table.q_value(Action::Defer, 0, 0).is_some() {
        table
    } else {
        swept = bellman_step(table, params)?;
        &swept
    };
    let grid = table.grid();
    let mut actions = Vec::with_capacity((params.b_max() as usize + 1) * grid.len());
    for b in 0..=params.b_max() {
        for i in 0..grid.len() {
            let qs: Vec<(Action, f64)> = Action::ALL
                .into_iter()
                .filter_map(|a| source.q_value(a, b, i).map(|q| (a, q)))
                .collect();
            let best = qs.iter().map(|(_, q)| *q).fold(f64::NEG_INFINITY, f64::max);
            let choice = qs
                .iter()
                .rev()
                .find(|(_, q)| *q >= best - TIE_TOL)
                .map(|(a, _)| *a)
                .unwrap_or(Action::Defer);
            actions.push(choice);
        }
    }
    Ok(PolicyTable {
        grid,
        b_max: params.b_max(),
        actions,
    })
}

/// Maximal run of one action along a battery row, as grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub action: Action,
    pub first: usize,
    pub last: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn runs(row: &[Action]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (i, &a) in row.iter().enumerate() {
        match out.last_mut() {
            Some(run) if run.action == a => run.last = i,
            _ => out.push(Run {
                action: a,
                first: i,
                last: i,
            }),
        }
    }
    out
}

/// Drops single-cell runs that sit between two other runs and merges the
/// neighbours they separated.
fn drop_single_cell_runs(runs: &[Run]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let interior = k > 0 && k + 1 < runs.len();
        if interior && run.len() == 1 {
            if let Some(prev) = out.last_mut() {
                prev.last = run.last;
            }
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.action == run.action => prev.last = run.last,
            _ => out.push(*run),
        }
    }
    out
}

fn is_subsequence(labels: &[Action], pattern: &[Action]) -> bool {
    let mut it = pattern.iter();
    labels.iter().all(|l| it.any(|p| p == l))
}

/// Interval pattern allowed for a single-rate row: `D` below the sensing
/// cost, a subsequence of `D O D` below the transmission cost and of
/// `D O D H` above it.
pub fn single_rate_pattern(battery: u32, params: &SystemParams) -> &'static [Action] {
    use Action::*;
    if battery < params.e_sense() {
        &[Defer]
    } else if battery < params.e_tx() {
        &[Defer, SenseDefer, Defer]
    } else {
        &[Defer, SenseDefer, Defer, HighRate]
    }
}

fn single_rate_ok(runs: &[Run], battery: u32, params: &SystemParams) -> bool {
    let labels: Vec<Action> = runs.iter().map(|r| r.action).collect();
    is_subsequence(&labels, single_rate_pattern(battery, params))
}

/// Two-rate structure: the `H` cells form a suffix ending at `p = 1` and the
/// `OD` and `OT` cells each form at most one run. `D` and `L` may fragment.
fn two_rate_ok(runs: &[Run]) -> bool {
    let count = |a: Action| runs.iter().filter(|r| r.action == a).count();
    let high_ok = match runs.iter().position(|r| r.action == Action::HighRate) {
        None => true,
        Some(k) => k + 1 == runs.len(),
    };
    high_ok && count(Action::SenseDefer) <= 1 && count(Action::SenseTransmit) <= 1
}

/// Checks one battery row against the threshold structure, allowing one grid
/// step of slack. Returns the runs the structure holds for.
pub fn check_row_structure(row: &[Action], battery: u32, params: &SystemParams) -> Result<Vec<Run>> {
    let raw = runs(row);
    let ok = |r: &[Run]| {
        if params.is_single_rate() {
            single_rate_ok(r, battery, params)
        } else {
            two_rate_ok(r)
        }
    };
    if ok(&raw) {
        return Ok(raw);
    }
    let cleaned = drop_single_cell_runs(&raw);
    if ok(&cleaned) {
        return Ok(cleaned);
    }
    let labels: Vec<&str> = raw.iter().map(|r| r.action.label()).collect();
    Err(Error::StructureViolation {
        battery,
        detail: format!("interval sequence [{}]", labels.join(" ")),
    })
}

/// Belief intervals and their actions for one battery level.
///
/// Interval `k` is `[breakpoints[k], breakpoints[k + 1])`; the last one is
/// closed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRow {
    breakpoints: Vec<f64>,
    actions: Vec<Action>,
}

impl ThresholdRow {
    pub fn new(breakpoints: Vec<f64>, actions: Vec<Action>) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("threshold row: {m}")));
        if actions.is_empty() || breakpoints.len() != actions.len() + 1 {
            return bad("need one more breakpoint than actions");
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return bad("breakpoints must start at 0 and end at 1");
        }
        let n = breakpoints.len();
        for (k, w) in breakpoints.windows(2).enumerate() {
            // only the closing interval may collapse onto the point 1
            if !(w[0] < w[1] || (k + 2 == n && w[0] == w[1])) {
                return bad("breakpoints must increase");
            }
        }
        Ok(Self { breakpoints, actions })
    }

    pub fn uniform(action: Action) -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            actions: vec![action],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Interior breakpoints, i.e. the thresholds proper.
    pub fn thresholds(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    pub fn lookup(&self, p: f64) -> Action {
        let k = self.breakpoints[1..self.breakpoints.len() - 1].partition_point(|&t| t <= p);
        self.actions[k]
    }

    fn from_runs(runs: &[Run], grid: BeliefGrid) -> Self {
        let mut breakpoints = vec![0.0];
        for run in &runs[..runs.len() - 1] {
            breakpoints.push(0.5 * (grid.point(run.last) + grid.point(run.last + 1)));
        }
        breakpoints.push(1.0);
        Self {
            breakpoints,
            actions: runs.iter().map(|r| r.action).collect(),
        }
    }
}

/// Per-battery threshold policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    rows: Vec<ThresholdRow>,
}

impl ThresholdPolicy {
    pub fn new(rows: Vec<ThresholdRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[ThresholdRow] {
        &self.rows
    }

    pub fn row(&self, battery: u32) -> &ThresholdRow {
        &self.rows[battery as usize]
    }

    pub fn b_max(&self) -> u32 {
        self.rows.len() as u32 - 1
    }

    /// Every row's actions feasible at its battery level. Only the action
    /// labels are checked, not the belief ranges they cover.
    pub fn is_feasible(&self, params: &SystemParams) -> bool {
        self.rows.len() == params.b_max() as usize + 1
            && self.rows.iter().enumerate().all(|(b, row)| {
                let allowed = feasible_actions(b as u32, params);
                row.actions.iter().all(|a| allowed.contains(*a))
            })
    }

    /// Text export: one tab-separated line per battery with the breakpoints
    /// and the interval actions.
    pub fn to_text(&self, single_rate: bool) -> String {
        let mut out = String::from("battery\tbreakpoints\tactions\n");
        for (b, row) in self.rows.iter().enumerate() {
            let bps: Vec<String> = row.breakpoints.iter().map(|t| t.to_string()).collect();
            let acts: Vec<&str> = row
                .actions
                .iter()
                .map(|a| match a {
                    Action::SenseDefer if single_rate => "O",
                    a => a.label(),
                })
                .collect();
            let _ = writeln!(out, "{b}\t{}\t{}", bps.join(" "), acts.join(" "));
        }
        out
    }

    /// Parses [`ThresholdPolicy::to_text`] output; `#` lines are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: String| Error::InvalidParams(format!("threshold file line {line}: {m}"));
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("battery") {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(n + 1, "expected 3 tab-separated fields".into()));
            }
            let battery: usize = fields[0].trim().parse().map_err(|e| bad(n + 1, format!("{e}")))?;
            if battery != rows.len() {
                return Err(bad(n + 1, format!("expected battery {}, found {battery}", rows.len())));
            }
            let breakpoints = fields[1]
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(n + 1, format!("{e}"))))
                .collect::<Result<Vec<_>>>()?;
            let actions = fields[2]
                .split_whitespace()
                .map(str::parse::<Action>)
                .collect::<Result<Vec<_>>>()?;
            rows.push(ThresholdRow::new(breakpoints, actions).map_err(|e| bad(n + 1, e.to_string()))?);
        }
        if rows.is_empty() {
            return Err(Error::InvalidParams("threshold file has no rows".into()));
        }
        Ok(Self { rows })
    }
}

impl Policy for ThresholdPolicy {
    fn action(&self, battery: u32, belief: f64) -> Action {
        self.rows[battery as usize].lookup(belief)
    }
}

/// Run-length encodes every battery row into belief intervals, with
/// breakpoints midway between differing neighbours.
///
/// Rows must satisfy the threshold structure up to one grid step; isolated
/// single-cell runs that break it are absorbed. For single-rate models a row
/// that still violates the `D O D H` pattern is an error.
pub fn extract_thresholds(policy: &PolicyTable, params: &SystemParams) -> Result<ThresholdPolicy> {
    let grid = policy.grid();
    let mut rows = Vec::with_capacity(policy.b_max() as usize + 1);
    for b in 0..=policy.b_max() {
        let row = policy.row(b);
        let runs = if params.is_single_rate() {
            check_row_structure(row, b, params)?
        } else {
            runs(row)
        };
        rows.push(ThresholdRow::from_runs(&runs, grid));
    }
    Ok(ThresholdPolicy { rows })
}

/// Transmits at the high rate whenever the battery allows it.
#[derive(Debug, Clone, Copy)]
pub struct Greedy {
    e_tx: u32,
}

pub fn greedy_policy(params: &SystemParams) -> Greedy {
    Greedy { e_tx: params.e_tx() }
}

impl Policy for Greedy {
    fn action(&self, battery: u32, _belief: f64) -> Action {
        if battery >= self.e_tx {
            Action::HighRate
        } else {
            Action::Defer
        }
    }
}

/// Senses every slot it can afford; the transmit part happens only when the
/// channel is GOOD and the battery covers a full transmission.
#[derive(Debug, Clone, Copy)]
pub struct Opportunistic {
    e_sense: u32,
}

pub fn opportunistic_policy(params: &SystemParams) -> Opportunistic {
    Opportunistic {
        e_sense: params.e_sense(),
    }
}

impl Policy for Opportunistic {
    fn action(&self, battery: u32, _belief: f64) -> Action {
        if battery >= self.e_sense {
            Action::SenseDefer
        } else {
            Action::Defer
        }
    }
}

/// Best defer-or-transmit policy: value iteration over `{D, H}` only, then
/// per-battery thresholds. The result never senses.
pub fn single_threshold_policy(
    params: &SystemParams,
    grid: BeliefGrid,
    tol: f64,
    max_iter: usize,
) -> Result<ThresholdPolicy> {
    let table = solve(
        params,
        grid,
        &SolverConfig {
            tol,
            max_iter: Some(max_iter),
            actions: ActionSet::DEFER_OR_HIGH,
        },
    )?;
    let policy = extract_policy(&table, params)?;
    let grid = policy.grid();
    let rows = (0..=params.b_max())
        .map(|b| ThresholdRow::from_runs(&runs(policy.row(b)), grid))
        .collect();
    Ok(ThresholdPolicy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{two_point_pmf, ParamSpec};
    use crate::solver::{default_max_iter, value_iteration};
    use Action::*;

    fn params(r_low: f64, beta: f64) -> SystemParams {
        SystemParams::new(ParamSpec {
            lambda0: 0.6,
            lambda1: 0.9,
            energy_pmf: two_point_pmf(10, 0.1),
            b_max: 30,
            e_tx: 10,
            e_sense: 2,
            r_low,
            r_high: 3.0,
            beta,
        })
        .unwrap()
    }

    fn grid() -> BeliefGrid {
        BeliefGrid::new(201).unwrap()
    }

    #[test]
    fn empty_battery_always_defers() {
        let p = params(0.0, 0.9);
        let t = value_iteration(&p, grid(), 1e-9, default_max_iter(0.9)).unwrap();
        let pol = extract_policy(&t, &p).unwrap();
        assert!(pol.row(0).iter().all(|a| *a == Defer));
        for b in 10..=30 {
            assert_eq!(pol.get(b, 200), HighRate, "b = {b}");
        }
    }

    #[test]
    fn myopic_policy_transmits_at_half_belief() {
        let p = params(0.0, 0.0);
        let t = value_iteration(&p, grid(), 1e-9, 100).unwrap();
        let pol = extract_policy(&t, &p).unwrap();
        assert_eq!(pol.action(10, 0.5), HighRate);
        assert_eq!(t.q_value(HighRate, 10, 100), Some(1.5));
        assert!((t.q_value(SenseDefer, 10, 100).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn extraction_from_raw_values_sweeps_once() {
        let p = params(0.0, 0.9);
        let t = value_iteration(&p, grid(), 1e-9, default_max_iter(0.9)).unwrap();
        let raw = ValueTable::from_values(&p, grid(), t.values().to_vec()).unwrap();
        assert_eq!(extract_policy(&raw, &p).unwrap(), extract_policy(&t, &p).unwrap());
    }

    #[test]
    fn tie_break_prefers_later_action() {
        // at p = 0 with beta = 0 every feasible single-rate action earns nothing
        let p = params(0.0, 0.0);
        let t = value_iteration(&p, grid(), 1e-9, 100).unwrap();
        let pol = extract_policy(&t, &p).unwrap();
        assert_eq!(pol.get(20, 0), HighRate);
        assert_eq!(pol.get(5, 0), SenseDefer);
        assert_eq!(pol.get(1, 0), Defer);
    }

    #[test]
    fn run_length_encoding_with_midpoints() {
        let g = BeliefGrid::new(5).unwrap();
        let row = [Defer, Defer, SenseDefer, SenseDefer, HighRate];
        let r = ThresholdRow::from_runs(&runs(&row), g);
        assert_eq!(r.thresholds(), &[0.375, 0.875]);
        assert_eq!(r.actions(), &[Defer, SenseDefer, HighRate]);

        let all = ThresholdRow::from_runs(&runs(&[Defer; 5]), g);
        assert_eq!(all, ThresholdRow::uniform(Defer));
        assert_eq!(all.lookup(1.0), Defer);
    }

    #[test]
    fn lookup_uses_half_open_intervals() {
        let r = ThresholdRow::new(vec![0.0, 0.3, 0.6, 1.0], vec![Defer, SenseDefer, HighRate]).unwrap();
        assert_eq!(r.lookup(0.0), Defer);
        assert_eq!(r.lookup(0.2999), Defer);
        assert_eq!(r.lookup(0.3), SenseDefer);
        assert_eq!(r.lookup(0.6), HighRate);
        assert_eq!(r.lookup(1.0), HighRate);
        let closed = ThresholdRow::new(vec![0.0, 1.0, 1.0], vec![Defer, HighRate]).unwrap();
        assert_eq!(closed.lookup(0.99), Defer);
        assert_eq!(closed.lookup(1.0), HighRate);
        assert!(ThresholdRow::new(vec![0.0, 0.5, 0.5, 1.0], vec![Defer, SenseDefer, HighRate]).is_err());
        assert!(ThresholdRow::new(vec![0.1, 1.0], vec![Defer]).is_err());
    }

    #[test]
    fn single_rate_structure_checks() {
        let p = params(0.0, 0.9);
        let ok = [Defer, SenseDefer, SenseDefer, Defer, HighRate, HighRate];
        assert!(check_row_structure(&ok, 20, &p).is_ok());
        // one stray cell is within slack
        let blip = [Defer, Defer, HighRate, Defer, Defer, HighRate, HighRate];
        let cleaned = check_row_structure(&blip, 20, &p).unwrap();
        assert_eq!(
            cleaned.iter().map(|r| r.action).collect::<Vec<_>>(),
            vec![Defer, HighRate]
        );
        let bad = [Defer, Defer, HighRate, HighRate, Defer, Defer, HighRate];
        assert!(matches!(
            check_row_structure(&bad, 20, &p),
            Err(Error::StructureViolation { battery: 20, .. })
        ));
        // no transmission below the transmission cost
        assert!(check_row_structure(&[Defer, HighRate, HighRate], 5, &p).is_err());
        assert!(check_row_structure(&[Defer, SenseDefer, SenseDefer, Defer], 5, &p).is_ok());
    }

    #[test]
    fn two_rate_structure_checks() {
        let p = params(1.0, 0.9);
        let frag = [
            Defer,
            LowRate,
            Defer,
            LowRate,
            LowRate,
            SenseTransmit,
            SenseTransmit,
            HighRate,
            HighRate,
        ];
        assert!(check_row_structure(&frag, 20, &p).is_ok());
        let split_h = [HighRate, HighRate, Defer, Defer, HighRate, HighRate];
        assert!(check_row_structure(&split_h, 20, &p).is_err());
        let split_od = [SenseDefer, SenseDefer, Defer, Defer, SenseDefer, SenseDefer];
        assert!(check_row_structure(&split_od, 20, &p).is_err());
    }

    #[test]
    fn extracted_thresholds_reproduce_the_grid_policy() {
        let p = params(0.0, 0.95);
        let t = value_iteration(&p, grid(), 1e-9, default_max_iter(0.95)).unwrap();
        let pol = extract_policy(&t, &p).unwrap();
        let th = extract_thresholds(&pol, &p).unwrap();
        assert!(th.is_feasible(&p));
        let mut mismatches = 0;
        for b in 0..=p.b_max() {
            for (i, x) in grid().points().enumerate() {
                if th.action(b, x) != pol.get(b, i) {
                    mismatches += 1;
                }
            }
        }
        // only cells absorbed by the one-step slack may differ
        assert!(mismatches <= 2 * (p.b_max() as usize + 1), "{mismatches}");
    }

    #[test]
    fn threshold_text_roundtrip() {
        let p = params(0.0, 0.95);
        let t = value_iteration(&p, grid(), 1e-9, default_max_iter(0.95)).unwrap();
        let th = extract_thresholds(&extract_policy(&t, &p).unwrap(), &p).unwrap();
        let text = th.to_text(true);
        assert!(text.lines().any(|l| l.ends_with("\tD H")));
        assert_eq!(ThresholdPolicy::from_text(&text).unwrap(), th);
        assert!(ThresholdPolicy::from_text("0\t0 1\tX\n").is_err());
        assert!(ThresholdPolicy::from_text("1\t0 1\tD\n").is_err());
        assert!(ThresholdPolicy::from_text("").is_err());
    }

    #[test]
    fn baselines() {
        let p = params(0.0, 0.9);
        let g = greedy_policy(&p);
        assert_eq!(g.action(10, 0.0), HighRate);
        assert_eq!(g.action(10, 1.0), HighRate);
        assert_eq!(g.action(9, 1.0), Defer);
        assert_eq!(g.action(0, 0.5), Defer);
        let o = opportunistic_policy(&p);
        assert_eq!(o.action(1, 0.9), Defer);
        assert_eq!(o.action(2, 0.9), SenseDefer);
        assert_eq!(o.action(25, 0.1), SenseDefer);
        for b in 0..=p.b_max() {
            let ok = feasible_actions(b, &p);
            for x in [0.0, 0.3, 1.0] {
                assert!(ok.contains(g.action(b, x)) && ok.contains(o.action(b, x)));
            }
        }
    }

    #[test]
    fn single_threshold_never_senses() {
        let p = params(0.0, 0.95);
        let th = single_threshold_policy(&p, grid(), 1e-9, default_max_iter(0.95)).unwrap();
        assert!(th.is_feasible(&p));
        for b in 0..=p.b_max() {
            let row = th.row(b);
            assert!(row.actions().iter().all(|a| matches!(a, Defer | HighRate)));
            if b < 10 {
                assert_eq!(row.actions(), &[Defer]);
            } else {
                assert_eq!(row.lookup(1.0), HighRate);
            }
        }
        let myopic = params(0.0, 0.0);
        let th = single_threshold_policy(&myopic, grid(), 1e-9, 100).unwrap();
        for x in [0.005, 0.3, 0.9] {
            assert_eq!(th.action(15, x), HighRate);
        }
    }

    #[test]
    fn region_csv() {
        let p = params(0.0, 0.9);
        let g = BeliefGrid::new(3).unwrap();
        let t = value_iteration(&p, g, 1e-9, 1000).unwrap();
        let pol = extract_policy(&t, &p).unwrap();
        let mut buf = Vec::new();
        pol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("battery,belief,action"));
        assert_eq!(text.lines().count(), 1 + 31 * 3);
        assert_eq!(text.lines().nth(1), Some("0,0,0"));
    }
}
