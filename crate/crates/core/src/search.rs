//! Coordinate-ascent search over single-rate threshold policies, scored by
//! simulated average throughput on common random numbers.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::belief::{propagate, sort_dedup};
use crate::error::{Error, Result};
use crate::model::{Action, SystemParams};
use crate::policy::{single_rate_pattern, Policy, ThresholdPolicy, ThresholdRow};
use crate::sim::{
    reward_kind, run_episodes, transition, ExogenousTraces, InitialConditions, RewardCounts, SimState, ThroughputStats,
};

/// Average throughput from an empty battery with the channel and belief at
/// their stationary values.
pub fn evaluate_average_throughput<P: Policy + ?Sized>(
    policy: &P,
    params: &SystemParams,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<ThroughputStats> {
    run_episodes(
        policy,
        params,
        episodes,
        horizon,
        seed,
        &InitialConditions::stationary(params)?,
    )
}

/// Three ordered thresholds per battery level.
///
/// Row `b` plays `D` below `rho[0]`, `OD` on `[rho[0], rho[1])`, `D` on
/// `[rho[1], rho[2])` and `H` from `rho[2]` on. An infinite threshold means
/// the intervals above it are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleThresholds {
    rows: Vec<[f64; 3]>,
    e_sense: u32,
    e_tx: u32,
}

impl TripleThresholds {
    /// Reads a single-rate threshold policy whose rows follow the `D O D H`
    /// pattern.
    pub fn from_policy(policy: &ThresholdPolicy, params: &SystemParams) -> Result<Self> {
        if !params.is_single_rate() {
            return Err(Error::InvalidParams(
                "threshold search needs a single-rate model".into(),
            ));
        }
        if !policy.is_feasible(params) {
            return Err(Error::InvalidParams("initial policy has infeasible actions".into()));
        }
        let mut rows = Vec::with_capacity(policy.rows().len());
        for (b, row) in policy.rows().iter().enumerate() {
            let b = b as u32;
            let labels = row.actions();
            let pattern = single_rate_pattern(b, params);
            let mut it = pattern.iter();
            if !labels.iter().all(|l| it.any(|p| p == l)) {
                return Err(Error::StructureViolation {
                    battery: b,
                    detail: format!("initial row {labels:?} is not an ordered threshold row"),
                });
            }
            let bp = row.breakpoints();
            let start = |k: usize| bp[k];
            let h = labels.iter().position(|a| *a == Action::HighRate);
            let o = labels.iter().position(|a| *a == Action::SenseDefer);
            let rho3 = h.map_or(f64::INFINITY, start);
            let (rho1, rho2) = match o {
                Some(k) if k + 1 == labels.len() => (start(k), f64::INFINITY),
                Some(k) => (start(k), start(k + 1)),
                None => (rho3, rho3),
            };
            rows.push([rho1, rho2, rho3]);
        }
        Ok(Self {
            rows,
            e_sense: params.e_sense(),
            e_tx: params.e_tx(),
        })
    }

    pub fn row(&self, battery: u32) -> [f64; 3] {
        self.rows[battery as usize]
    }

    /// Back to belief intervals, dropping empty ones.
    pub fn to_policy(&self) -> ThresholdPolicy {
        let rows = self
            .rows
            .iter()
            .map(|&[r1, r2, r3]| {
                let cut = |x: f64| x.clamp(0.0, 1.0);
                let pieces = [
                    (Action::Defer, 0.0, cut(r1)),
                    (Action::SenseDefer, cut(r1), cut(r2)),
                    (Action::Defer, cut(r2), cut(r3)),
                ];
                let mut breakpoints = vec![0.0];
                let mut actions: Vec<Action> = Vec::new();
                for (a, lo, hi) in pieces {
                    if hi <= lo {
                        continue;
                    }
                    if actions.last() != Some(&a) {
                        if !actions.is_empty() {
                            breakpoints.push(lo);
                        }
                        actions.push(a);
                    }
                }
                if r3 <= 1.0 {
                    if !actions.is_empty() {
                        breakpoints.push(r3.max(0.0));
                    }
                    actions.push(Action::HighRate);
                } else {
                    // the clipped intervals are half-open, so settle p = 1 itself
                    let at_one = if r1 <= 1.0 && 1.0 < r2 {
                        Action::SenseDefer
                    } else {
                        Action::Defer
                    };
                    if actions.last() != Some(&at_one) {
                        breakpoints.push(1.0);
                        actions.push(at_one);
                    }
                }
                breakpoints.push(1.0);
                ThresholdRow::new(breakpoints, actions).expect("ordered thresholds give valid rows")
            })
            .collect();
        ThresholdPolicy::new(rows)
    }
}

impl Policy for TripleThresholds {
    #[inline]
    fn action(&self, battery: u32, belief: f64) -> Action {
        if battery < self.e_sense {
            return Action::Defer;
        }
        let [r1, r2, r3] = self.rows[battery as usize];
        if belief >= r3 && battery >= self.e_tx {
            Action::HighRate
        } else if belief >= r1 && belief < r2 {
            Action::SenseDefer
        } else {
            Action::Defer
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Values tried for every threshold; sorted, in `[0, 1]`.
    pub candidates: Vec<f64>,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub max_passes: usize,
    /// Defaults to [`InitialConditions::stationary`].
    pub initial: Option<InitialConditions>,
}

impl SearchConfig {
    /// Reachable beliefs `J^k(lambda0)`, `J^k(lambda1)` for `k <= 20` plus a
    /// uniform grid of step 0.05.
    pub fn default_candidates(params: &SystemParams) -> Vec<f64> {
        let mut out: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for seed in [params.lambda0(), params.lambda1()] {
            let mut p = seed;
            for _ in 0..=20 {
                out.push(p);
                p = propagate(p, params);
            }
        }
        sort_dedup(&mut out, 1e-12);
        out
    }

    pub fn with_defaults(params: &SystemParams, seed: u64) -> Self {
        Self {
            candidates: Self::default_candidates(params),
            episodes: 30,
            horizon: 100_000,
            seed,
            max_passes: 5,
            initial: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let sorted = self.candidates.windows(2).all(|w| w[0] <= w[1]);
        let in_range = self.candidates.iter().all(|c| (0.0..=1.0).contains(c));
        if self.candidates.is_empty() || !sorted || !in_range {
            return Err(Error::InvalidParams(
                "search candidates must be a non-empty sorted subset of [0, 1]".into(),
            ));
        }
        if self.horizon >= u32::MAX as usize {
            return Err(Error::InvalidParams("search horizon must fit in 32 bits".into()));
        }
        if self.episodes == 0 || self.horizon == 0 || self.max_passes == 0 {
            return Err(Error::InvalidParams(
                "search needs episodes, horizon and passes >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLogEntry {
    pub pass: usize,
    pub battery: u32,
    pub threshold: usize,
    pub candidate: f64,
    pub throughput: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub policy: ThresholdPolicy,
    pub thresholds: TripleThresholds,
    pub stats: ThroughputStats,
    pub initial_stats: ThroughputStats,
    pub passes: usize,
    /// Whether the last pass made no move.
    pub converged: bool,
    pub log: Vec<SearchLogEntry>,
}

impl SearchOutcome {
    pub fn write_log_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "pass,battery,threshold,candidate,throughput,accepted")?;
        for e in &self.log {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.pass,
                e.battery,
                e.threshold + 1,
                e.candidate,
                e.throughput,
                u8::from(e.accepted)
            )?;
        }
        Ok(())
    }
}

/// Every belief value the simulator can hold, starting from `x0`: the orbits
/// of `x0`, `lambda0` and `lambda1` under propagation.
fn visited_beliefs(x0: f64, horizon: usize, params: &SystemParams) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    for seed in [x0, params.lambda0(), params.lambda1()] {
        let mut p = seed;
        for _ in 0..=horizon {
            if !seen.insert(p.to_bits()) {
                break;
            }
            p = propagate(p, params);
        }
    }
    let mut out: Vec<f64> = seen.into_iter().map(f64::from_bits).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// The current policy's trajectories on the cached draws.
///
/// A policy that differs from the current one in a single battery row
/// follows the same path up to the first slot where the two disagree, and
/// rejoins it as soon as its battery and belief match again (the draws are
/// shared). Scoring it only needs the slots in between.
struct Baseline {
    battery: Vec<Vec<u32>>,
    belief: Vec<Vec<f64>>,
    // reward counts accumulated before each slot, one extra entry at the end
    cumulative: Vec<Vec<[u32; 4]>>,
    // slots at each battery level, per episode
    row_slots: Vec<Vec<Vec<u32>>>,
}

fn add_span(acc: &mut RewardCounts, from: &[u32; 4], to: &[u32; 4]) {
    for r in 0..4 {
        acc[r] += u64::from(to[r] - from[r]);
    }
}

impl Baseline {
    fn build<P: Policy>(traces: &ExogenousTraces, policy: &P) -> Result<Self> {
        let params = traces.params();
        let horizon = traces.horizon();
        let init = traces.initial();
        let n_rows = params.b_max() as usize + 1;
        let episodes: Vec<_> = (0..traces.episodes())
            .into_par_iter()
            .map(|k| {
                let channel = &traces.channel[k];
                let harvest = &traces.harvest[k];
                let mut battery = Vec::with_capacity(horizon);
                let mut belief = Vec::with_capacity(horizon);
                let mut cumulative = Vec::with_capacity(horizon + 1);
                let mut row_slots = vec![Vec::new(); n_rows];
                let mut counts = [0u32; 4];
                let mut state = SimState {
                    battery: init.state.battery,
                    belief: init.state.belief,
                    good: channel[0],
                };
                for (t, &energy) in harvest.iter().enumerate().take(horizon) {
                    battery.push(state.battery);
                    belief.push(state.belief);
                    cumulative.push(counts);
                    row_slots[state.battery as usize].push(t as u32);
                    let action = policy.action(state.battery, state.belief);
                    if let Some(r) = reward_kind(state.battery, action, state.good, params) {
                        counts[r] += 1;
                    }
                    let next_good = channel.get(t + 1).copied().unwrap_or(false);
                    state = transition(state, action, energy, next_good, params)?;
                }
                cumulative.push(counts);
                Ok((battery, belief, cumulative, row_slots))
            })
            .collect::<Result<_>>()?;
        let mut out = Self {
            battery: Vec::new(),
            belief: Vec::new(),
            cumulative: Vec::new(),
            row_slots: Vec::new(),
        };
        for (battery, belief, cumulative, row_slots) in episodes {
            out.battery.push(battery);
            out.belief.push(belief);
            out.cumulative.push(cumulative);
            out.row_slots.push(row_slots);
        }
        Ok(out)
    }

    fn counts(&self) -> Vec<RewardCounts> {
        self.cumulative
            .iter()
            .map(|c| c.last().unwrap().map(u64::from))
            .collect()
    }

    fn visited(&self, battery: u32) -> bool {
        self.row_slots.iter().any(|rows| !rows[battery as usize].is_empty())
    }

    /// Reward counts per episode for `trial`, which may differ from `base`
    /// (the policy this baseline was built from) only at `battery`.
    fn score(
        &self,
        traces: &ExogenousTraces,
        base: &TripleThresholds,
        trial: &TripleThresholds,
        battery: u32,
    ) -> Result<Vec<RewardCounts>> {
        let params = traces.params();
        let (e_sense, e_tx, b_max) = (params.e_sense(), params.e_tx(), params.b_max());
        let (l0, l1) = (params.lambda0(), params.lambda1());
        let horizon = traces.horizon();
        (0..traces.episodes())
            .map(|k| {
                let channel = &traces.channel[k];
                let harvest = &traces.harvest[k];
                let cumulative = &self.cumulative[k];
                let beliefs = &self.belief[k];
                let batteries = &self.battery[k];
                let mut slots = self.row_slots[k][battery as usize].iter().map(|&s| s as usize);
                let mut acc = [0u64; 4];
                let mut t = 0;
                while t < horizon {
                    let split = slots.by_ref().find(|&s| {
                        s >= t && {
                            let x = beliefs[s];
                            trial.action(battery, x) != base.action(battery, x)
                        }
                    });
                    let Some(s) = split else {
                        add_span(&mut acc, &cumulative[t], &cumulative[horizon]);
                        break;
                    };
                    add_span(&mut acc, &cumulative[t], &cumulative[s]);
                    t = s;
                    let (mut b, mut x) = (battery, beliefs[s]);
                    loop {
                        let good = channel[t];
                        let [r1, r2, r3] = trial.rows[b as usize];
                        let high = x >= r3;
                        let sense = !high & (x >= r1) & (x < r2);
                        let full = b >= e_tx;
                        acc[1] += u64::from(high & good);
                        acc[3] += u64::from(sense & good & full);
                        let spent = if high | (sense & good & full) {
                            e_tx
                        } else if sense {
                            e_sense
                        } else {
                            0
                        };
                        b = (b - spent + harvest[t]).min(b_max);
                        x = if high | sense {
                            if good {
                                l1
                            } else {
                                l0
                            }
                        } else {
                            propagate(x, params)
                        };
                        t += 1;
                        if t == horizon || (b == batteries[t] && x.to_bits() == beliefs[t].to_bits()) {
                            break;
                        }
                    }
                }
                Ok(acc)
            })
            .collect()
    }
}

/// Coordinate ascent on the per-battery thresholds.
///
/// Battery rows are swept upward; for every threshold each candidate that
/// keeps `rho1 <= rho2 <= rho3` is scored, and the best one replaces the
/// current value only if it strictly beats the current throughput. All
/// scores use the same pre-drawn channel and harvest paths, so accepted moves
/// never lower the reported throughput. Candidates that split the reachable
/// beliefs the same way as the current value, or as an earlier candidate,
/// define the same policy and are skipped. Rows the current policy never
/// visits are skipped too.
pub fn search_thresholds(
    params: &SystemParams,
    config: &SearchConfig,
    init: &ThresholdPolicy,
) -> Result<SearchOutcome> {
    config.validate()?;
    let mut current = TripleThresholds::from_policy(init, params)?;
    let initial = match config.initial {
        Some(i) => i,
        None => InitialConditions::stationary(params)?,
    };
    let traces = ExogenousTraces::draw(params, config.episodes, config.horizon, config.seed, &initial)?;
    let beliefs = visited_beliefs(initial.state.belief, config.horizon, params);
    let class = |c: f64| beliefs.partition_point(|&v| v < c);
    let stats = |counts: &[RewardCounts]| ThroughputStats::from_counts(counts, params, config.horizon, config.seed);

    let mut baseline = Baseline::build(&traces, &current)?;
    let initial_stats = stats(&baseline.counts());
    let mut best = initial_stats;
    let mut log = Vec::new();
    let mut passes = 0;
    let mut converged = false;
    while passes < config.max_passes {
        passes += 1;
        let mut moved = false;
        for b in params.e_sense()..=params.b_max() {
            if !baseline.visited(b) {
                continue;
            }
            let n_thresholds = if b >= params.e_tx() { 3 } else { 2 };
            for j in 0..n_thresholds {
                let rho = current.row(b);
                let lo = if j == 0 { f64::NEG_INFINITY } else { rho[j - 1] };
                let hi = if j == 2 { f64::INFINITY } else { rho[j + 1] };
                let mut classes = vec![class(rho[j])];
                let tries: Vec<f64> = config
                    .candidates
                    .iter()
                    .copied()
                    .filter(|&c| c >= lo && c <= hi)
                    .filter(|&c| {
                        let k = class(c);
                        let fresh = !classes.contains(&k);
                        if fresh {
                            classes.push(k);
                        }
                        fresh
                    })
                    .collect();
                if tries.is_empty() {
                    continue;
                }
                let scores = tries
                    .par_iter()
                    .map(|&c| {
                        let mut trial = current.clone();
                        trial.rows[b as usize][j] = c;
                        Ok(stats(&baseline.score(&traces, &current, &trial, b)?))
                    })
                    .collect::<Result<Vec<ThroughputStats>>>()?;
                // first maximum wins, so ties go to the smallest candidate
                let (k_best, s_best) =
                    scores.iter().enumerate().fold(
                        (0, scores[0]),
                        |acc, (k, s)| if s.mean > acc.1.mean { (k, *s) } else { acc },
                    );
                let accept = s_best.mean > best.mean;
                for (k, (&c, s)) in tries.iter().zip(&scores).enumerate() {
                    log.push(SearchLogEntry {
                        pass: passes,
                        battery: b,
                        threshold: j,
                        candidate: c,
                        throughput: s.mean,
                        accepted: accept && k == k_best,
                    });
                }
                if accept {
                    current.rows[b as usize][j] = tries[k_best];
                    best = s_best;
                    moved = true;
                    baseline = Baseline::build(&traces, &current)?;
                }
            }
        }
        if !moved {
            converged = true;
            break;
        }
    }
    Ok(SearchOutcome {
        policy: current.to_policy(),
        thresholds: current,
        stats: best,
        initial_stats,
        passes,
        converged,
        log,
    })
}
