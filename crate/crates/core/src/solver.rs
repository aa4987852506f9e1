//! Bellman backups over the `(battery, belief)` grid and value iteration.
//!
//! Two evaluation paths exist. The `backup_*` functions evaluate a single
//! action-value at an arbitrary belief straight from a [`ValueTable`], with
//! linear interpolation for off-grid beliefs. [`bellman_step`] evaluates all
//! grid states at once by first folding the harvest distribution into one
//! row per battery level; it is what value iteration runs, and the tests pin
//! it against the per-state backups.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::belief::{lerp, propagate, BeliefGrid};
use crate::error::{Error, Result};
use crate::model::{feasible_actions, is_feasible, Action, ActionSet, SystemParams};

const NUM_ACTIONS: usize = Action::ALL.len();

/// `V(b, p)` on the grid, together with the action-values of the sweep that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    grid: BeliefGrid,
    b_max: u32,
    values: Vec<f64>,
    // one row per (battery, action): [(b * 5 + action) * G + i]; NaN marks
    // infeasible pairs
    q_values: Vec<f64>,
    iterations: usize,
    residual: f64,
}

impl ValueTable {
    /// The all-zero table, with every action-value undefined.
    pub fn zeros(params: &SystemParams, grid: BeliefGrid) -> Self {
        let states = (params.b_max() as usize + 1) * grid.len();
        Self {
            grid,
            b_max: params.b_max(),
            values: vec![0.0; states],
            q_values: vec![f64::NAN; states * NUM_ACTIONS],
            iterations: 0,
            residual: f64::INFINITY,
        }
    }

    /// Table with the given values (row-major by battery) and no action-values.
    pub fn from_values(params: &SystemParams, grid: BeliefGrid, values: Vec<f64>) -> Result<Self> {
        let mut table = Self::zeros(params, grid);
        if values.len() != table.values.len() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                table.values.len(),
                values.len()
            )));
        }
        table.values = values;
        Ok(table)
    }

    pub fn grid(&self) -> BeliefGrid {
        self.grid
    }

    pub fn b_max(&self) -> u32 {
        self.b_max
    }

    /// Number of value-iteration sweeps applied so far.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Sup-norm change of the last sweep.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, battery: u32) -> &[f64] {
        let g = self.grid.len();
        let start = battery as usize * g;
        &self.values[start..start + g]
    }

    pub fn value(&self, battery: u32, index: usize) -> f64 {
        self.values[battery as usize * self.grid.len() + index]
    }

    pub fn set_value(&mut self, battery: u32, index: usize, value: f64) {
        let g = self.grid.len();
        self.values[battery as usize * g + index] = value;
    }

    /// `V(b, p)` with linear interpolation between grid points.
    pub fn value_at(&self, battery: u32, p: f64) -> f64 {
        self.grid.interpolate(self.row(battery), p)
    }

    /// Action-value from the last sweep, or `None` where the action was
    /// infeasible or excluded.
    pub fn q_value(&self, action: Action, battery: u32, index: usize) -> Option<f64> {
        let g = self.grid.len();
        let q = self.q_values[(battery as usize * NUM_ACTIONS + action.index()) * g + index];
        (!q.is_nan()).then_some(q)
    }

    /// Writes one CSV row per `(battery, belief)` with `V` and every
    /// action-value column; undefined action-values are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "battery,belief,value")?;
        for a in Action::ALL {
            write!(out, ",q_{}", a.label())?;
        }
        writeln!(out)?;
        for b in 0..=self.b_max {
            for (i, p) in self.grid.points().enumerate() {
                write!(out, "{b},{p},{}", self.value(b, i))?;
                for a in Action::ALL {
                    match self.q_value(a, b, i) {
                        Some(q) => write!(out, ",{q}")?,
                        None => write!(out, ",")?,
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    fn check_shape(&self, params: &SystemParams) -> Result<()> {
        if self.b_max != params.b_max() {
            return Err(Error::Shape(format!(
                "table has battery capacity {}, model has {}",
                self.b_max,
                params.b_max()
            )));
        }
        Ok(())
    }
}

/// Expected continuation `sum_m q_m V(min(b + m, b_max), p)`.
fn harvest_expectation(table: &ValueTable, params: &SystemParams, battery: u32, p: f64) -> f64 {
    params
        .harvest_support()
        .iter()
        .map(|&(m, q)| q * table.value_at((battery + m).min(params.b_max()), p))
        .sum()
}

fn require(battery: u32, action: Action, params: &SystemParams) -> Result<()> {
    if battery > params.b_max() || !is_feasible(battery, action, params) {
        return Err(Error::InfeasibleAction { action, battery });
    }
    Ok(())
}

pub fn backup_defer(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> f64 {
    params.beta() * harvest_expectation(table, params, battery, propagate(p, params))
}

pub fn backup_low(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    require(battery, Action::LowRate, params)?;
    let after = battery - params.e_tx();
    Ok(params.r_low() + params.beta() * harvest_expectation(table, params, after, propagate(p, params)))
}

pub fn backup_high(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    require(battery, Action::HighRate, params)?;
    let after = battery - params.e_tx();
    let beta = params.beta();
    let good = params.r_high() + beta * harvest_expectation(table, params, after, params.lambda1());
    let bad = beta * harvest_expectation(table, params, after, params.lambda0());
    Ok(p * good + (1.0 - p) * bad)
}

/// Sense, then transmit on GOOD and keep the remaining energy on BAD. Below
/// the transmission cost the sensing result only updates the belief.
pub fn backup_sense_defer(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    require(battery, Action::SenseDefer, params)?;
    let beta = params.beta();
    let sensed = battery - params.e_sense();
    if battery >= params.e_tx() {
        let sent = battery - params.e_tx();
        let good =
            (1.0 - params.tau()) * params.r_high() + beta * harvest_expectation(table, params, sent, params.lambda1());
        let bad = beta * harvest_expectation(table, params, sensed, params.lambda0());
        Ok(p * good + (1.0 - p) * bad)
    } else {
        let good = beta * harvest_expectation(table, params, sensed, params.lambda1());
        let bad = beta * harvest_expectation(table, params, sensed, params.lambda0());
        Ok(p * good + (1.0 - p) * bad)
    }
}

pub fn backup_sense_transmit(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    require(battery, Action::SenseTransmit, params)?;
    Ok(sense_transmit_value(table, battery, p, params))
}

/// `OT` backup without the feasibility check, so that single-rate models
/// (where `OT` is not offered) can still be compared against it.
pub(crate) fn sense_transmit_value(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> f64 {
    let beta = params.beta();
    let keep = 1.0 - params.tau();
    let after = battery - params.e_tx();
    let good = keep * params.r_high() + beta * harvest_expectation(table, params, after, params.lambda1());
    let bad = keep * params.r_low() + beta * harvest_expectation(table, params, after, params.lambda0());
    p * good + (1.0 - p) * bad
}

/// Auxiliary action: sense, then defer whatever the channel state.
pub fn backup_sense_always_defer(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    require(battery, Action::SenseDefer, params)?;
    let beta = params.beta();
    let sensed = battery - params.e_sense();
    let good = beta * harvest_expectation(table, params, sensed, params.lambda1());
    let bad = beta * harvest_expectation(table, params, sensed, params.lambda0());
    Ok(p * good + (1.0 - p) * bad)
}

/// Auxiliary action: sense, defer on GOOD, transmit at the low rate on BAD.
pub fn backup_sense_defer_on_good(table: &ValueTable, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    if battery > params.b_max() || battery < params.e_tx() {
        return Err(Error::InfeasibleAction {
            action: Action::SenseTransmit,
            battery,
        });
    }
    let beta = params.beta();
    let good = beta * harvest_expectation(table, params, battery - params.e_sense(), params.lambda1());
    let bad = (1.0 - params.tau()) * params.r_low()
        + beta * harvest_expectation(table, params, battery - params.e_tx(), params.lambda0());
    Ok(p * good + (1.0 - p) * bad)
}

/// Action-value of `action` at `(battery, p)`.
pub fn backup(table: &ValueTable, action: Action, battery: u32, p: f64, params: &SystemParams) -> Result<f64> {
    match action {
        Action::Defer => {
            require(battery, action, params)?;
            Ok(backup_defer(table, battery, p, params))
        }
        Action::LowRate => backup_low(table, battery, p, params),
        Action::SenseDefer => backup_sense_defer(table, battery, p, params),
        Action::SenseTransmit => backup_sense_transmit(table, battery, p, params),
        Action::HighRate => backup_high(table, battery, p, params),
    }
}

/// Precomputed interpolation positions for one grid.
struct Sweep<'a> {
    params: &'a SystemParams,
    grid: BeliefGrid,
    allowed: ActionSet,
    propagated: Vec<(usize, f64)>,
    points: Vec<f64>,
    at_lambda0: (usize, f64),
    at_lambda1: (usize, f64),
}

impl<'a> Sweep<'a> {
    fn new(params: &'a SystemParams, grid: BeliefGrid, allowed: ActionSet) -> Self {
        let propagated = grid.points().map(|p| grid.locate(propagate(p, params))).collect();
        Self {
            params,
            grid,
            allowed: allowed.with(Action::Defer),
            propagated,
            points: grid.points().collect(),
            at_lambda0: grid.locate(params.lambda0()),
            at_lambda1: grid.locate(params.lambda1()),
        }
    }

    /// One Bellman sweep from `prev` into `out_values` / `out_q`; returns
    /// the sup-norm change.
    fn run(&self, prev: &[f64], scratch: &mut Scratch, out_values: &mut [f64], out_q: &mut [f64]) -> f64 {
        let params = self.params;
        let g = self.grid.len();
        let b_max = params.b_max() as usize;

        // expected[b'] = sum_m q_m V(min(b' + m, b_max), .)
        scratch.expected.resize(prev.len(), 0.0);
        scratch.expected.fill(0.0);
        for (bp, row) in scratch.expected.chunks_mut(g).enumerate() {
            for &(m, q) in params.harvest_support() {
                let src = (bp + m as usize).min(b_max);
                for (dst, v) in row.iter_mut().zip(&prev[src * g..(src + 1) * g]) {
                    *dst += q * v;
                }
            }
        }
        scratch.at_lambda0.clear();
        scratch.at_lambda1.clear();
        for row in scratch.expected.chunks(g) {
            scratch.at_lambda0.push(lerp(row, self.at_lambda0.0, self.at_lambda0.1));
            scratch.at_lambda1.push(lerp(row, self.at_lambda1.0, self.at_lambda1.1));
        }

        let expected = &scratch.expected;
        let at0 = &scratch.at_lambda0;
        let at1 = &scratch.at_lambda1;
        let beta = params.beta();
        let keep = 1.0 - params.tau();
        let (r_low, r_high) = (params.r_low(), params.r_high());
        let e_tx = params.e_tx() as usize;
        let e_sense = params.e_sense() as usize;

        let points = &self.points;
        out_values
            .par_chunks_mut(g)
            .zip(out_q.par_chunks_mut(g * NUM_ACTIONS))
            .zip(prev.par_chunks(g))
            .enumerate()
            .map(|(b, ((vals, qs), old))| {
                let feasible = feasible_actions(b as u32, params).intersect(self.allowed);
                let stay = &expected[b * g..(b + 1) * g];
                let mut rows = qs.chunks_mut(g);
                let mut next_row = || rows.next().expect("one row per action");
                let (q_d, q_l, q_od, q_ot, q_h) = (next_row(), next_row(), next_row(), next_row(), next_row());

                for ((q, &(ji, jw)), v) in q_d.iter_mut().zip(&self.propagated).zip(vals.iter_mut()) {
                    *q = beta * lerp(stay, ji, jw);
                    *v = *q;
                }
                if feasible.contains(Action::LowRate) {
                    let spent = &expected[(b - e_tx) * g..(b - e_tx + 1) * g];
                    for ((q, &(ji, jw)), v) in q_l.iter_mut().zip(&self.propagated).zip(vals.iter_mut()) {
                        *q = r_low + beta * lerp(spent, ji, jw);
                        *v = v.max(*q);
                    }
                } else {
                    q_l.fill(f64::NAN);
                }
                // the remaining actions are affine in the belief: good * p + bad * (1 - p)
                let mut affine = |q: &mut [f64], enabled: bool, good: f64, bad: f64| {
                    if !enabled {
                        q.fill(f64::NAN);
                        return;
                    }
                    for ((q, &p), v) in q.iter_mut().zip(points).zip(vals.iter_mut()) {
                        *q = p * good + (1.0 - p) * bad;
                        *v = v.max(*q);
                    }
                };
                let sense = feasible.contains(Action::SenseDefer);
                if b >= e_tx {
                    let sent = b - e_tx;
                    affine(q_od, sense, keep * r_high + beta * at1[sent], beta * at0[b - e_sense]);
                    affine(
                        q_ot,
                        feasible.contains(Action::SenseTransmit),
                        keep * r_high + beta * at1[sent],
                        keep * r_low + beta * at0[sent],
                    );
                    affine(
                        q_h,
                        feasible.contains(Action::HighRate),
                        r_high + beta * at1[sent],
                        beta * at0[sent],
                    );
                } else {
                    let (good, bad) = if sense {
                        (beta * at1[b - e_sense], beta * at0[b - e_sense])
                    } else {
                        (0.0, 0.0)
                    };
                    affine(q_od, sense, good, bad);
                    affine(q_ot, false, 0.0, 0.0);
                    affine(q_h, false, 0.0, 0.0);
                }
                vals.iter().zip(old).fold(0.0f64, |m, (n, o)| m.max((n - o).abs()))
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Default)]
struct Scratch {
    expected: Vec<f64>,
    at_lambda0: Vec<f64>,
    at_lambda1: Vec<f64>,
}

/// Applies the Bellman operator once over every grid state.
pub fn bellman_step(table: &ValueTable, params: &SystemParams) -> Result<ValueTable> {
    bellman_step_with(table, params, ActionSet::ALL)
}

/// [`bellman_step`] restricted to `actions` (defer is always kept).
pub fn bellman_step_with(table: &ValueTable, params: &SystemParams, actions: ActionSet) -> Result<ValueTable> {
    table.check_shape(params)?;
    let sweep = Sweep::new(params, table.grid, actions);
    let mut next = ValueTable::zeros(params, table.grid);
    let residual = sweep.run(
        &table.values,
        &mut Scratch::default(),
        &mut next.values,
        &mut next.q_values,
    );
    next.iterations = table.iterations + 1;
    next.residual = residual;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once a sweep changes no value by more than this.
    pub tol: f64,
    /// Defaults to `100 * ceil(1 / (1 - beta))`.
    pub max_iter: Option<usize>,
    pub actions: ActionSet,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: None,
            actions: ActionSet::ALL,
        }
    }
}

pub fn default_max_iter(beta: f64) -> usize {
    100 * (1.0 / (1.0 - beta)).ceil() as usize
}

/// Value iteration from `V = 0` until the sup-norm change is at most `tol`.
pub fn value_iteration(params: &SystemParams, grid: BeliefGrid, tol: f64, max_iter: usize) -> Result<ValueTable> {
    solve(
        params,
        grid,
        &SolverConfig {
            tol,
            max_iter: Some(max_iter),
            actions: ActionSet::ALL,
        },
    )
}

pub fn solve(params: &SystemParams, grid: BeliefGrid, config: &SolverConfig) -> Result<ValueTable> {
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "tolerance {} must be positive",
            config.tol
        )));
    }
    let max_iter = config.max_iter.unwrap_or_else(|| default_max_iter(params.beta()));
    if max_iter == 0 {
        return Err(Error::InvalidParams("max_iter must be at least 1".into()));
    }
    let sweep = Sweep::new(params, grid, config.actions);
    let mut scratch = Scratch::default();
    let mut current = ValueTable::zeros(params, grid);
    let mut next = ValueTable::zeros(params, grid);
    for k in 1..=max_iter {
        let residual = sweep.run(&current.values, &mut scratch, &mut next.values, &mut next.q_values);
        std::mem::swap(&mut current, &mut next);
        current.iterations = k;
        current.residual = residual;
        if residual <= config.tol {
            return Ok(current);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: current.residual,
    })
}

/// The `horizon`-slot optimal values: `horizon` Bellman sweeps from `V = 0`.
pub fn finite_horizon(params: &SystemParams, grid: BeliefGrid, horizon: usize, actions: ActionSet) -> ValueTable {
    let sweep = Sweep::new(params, grid, actions);
    let mut scratch = Scratch::default();
    let mut current = ValueTable::zeros(params, grid);
    let mut next = ValueTable::zeros(params, grid);
    for k in 1..=horizon {
        let residual = sweep.run(&current.values, &mut scratch, &mut next.values, &mut next.q_values);
        std::mem::swap(&mut current, &mut next);
        current.iterations = k;
        current.residual = residual;
    }
    current
}
