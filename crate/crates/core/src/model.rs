//! Model constants, states, actions, expected rewards and the battery kernel.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on the energy pmf summing to one.
pub const PMF_SUM_TOL: f64 = 1e-12;

/// Plain-data description of a model, validated into [`SystemParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    /// Pr[GOOD at t | BAD at t-1].
    pub lambda0: f64,
    /// Pr[GOOD at t | GOOD at t-1].
    pub lambda1: f64,
    /// Pr[harvest = m] for m = 0..M-1.
    pub energy_pmf: Vec<f64>,
    pub b_max: u32,
    /// Energy units consumed by a full-slot transmission.
    pub e_tx: u32,
    /// Energy units consumed by channel sensing.
    pub e_sense: u32,
    /// Bits per slot of the reliable low-rate code.
    pub r_low: f64,
    /// Bits per slot of the high-rate code (GOOD channel only).
    pub r_high: f64,
    pub beta: f64,
}

/// Validated, immutable model parameters.
///
/// The sensing fraction `tau` is never stored; it is always derived as
/// `e_sense / e_tx` so that `tau * e_tx` and `e_sense` cannot drift apart.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    spec: ParamSpec,
    harvest_support: Vec<(u32, f64)>,
}

impl SystemParams {
    pub fn new(spec: ParamSpec) -> Result<Self> {
        validate(&spec)?;
        let harvest_support = spec
            .energy_pmf
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(m, &q)| (m as u32, q))
            .collect();
        Ok(Self { spec, harvest_support })
    }

    pub fn spec(&self) -> &ParamSpec {
        &self.spec
    }

    pub fn lambda0(&self) -> f64 {
        self.spec.lambda0
    }

    pub fn lambda1(&self) -> f64 {
        self.spec.lambda1
    }

    pub fn energy_pmf(&self) -> &[f64] {
        &self.spec.energy_pmf
    }

    /// Harvest amounts with nonzero probability, in increasing order.
    pub fn harvest_support(&self) -> &[(u32, f64)] {
        &self.harvest_support
    }

    pub fn b_max(&self) -> u32 {
        self.spec.b_max
    }

    pub fn e_tx(&self) -> u32 {
        self.spec.e_tx
    }

    pub fn e_sense(&self) -> u32 {
        self.spec.e_sense
    }

    pub fn tau(&self) -> f64 {
        self.spec.e_sense as f64 / self.spec.e_tx as f64
    }

    pub fn r_low(&self) -> f64 {
        self.spec.r_low
    }

    pub fn r_high(&self) -> f64 {
        self.spec.r_high
    }

    pub fn beta(&self) -> f64 {
        self.spec.beta
    }

    /// No bits can be delivered on a BAD channel: `L` and `OT` disappear
    /// and the sensing action reduces to a single `O`.
    pub fn is_single_rate(&self) -> bool {
        self.spec.r_low == 0.0
    }

    /// Upper bound on any discounted value: `r_high / (1 - beta)`.
    pub fn value_bound(&self) -> f64 {
        self.spec.r_high / (1.0 - self.spec.beta)
    }
}

/// Energy pmf with mass `1 - prob` at zero and `prob` at `amount`.
pub fn two_point_pmf(amount: u32, prob: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; amount as usize + 1];
    pmf[0] += 1.0 - prob;
    pmf[amount as usize] += prob;
    pmf
}

fn validate(spec: &ParamSpec) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidParams(msg));
    for (name, v) in [("lambda0", spec.lambda0), ("lambda1", spec.lambda1)] {
        if !(0.0..=1.0).contains(&v) {
            return bad(format!("{name} = {v} is not a probability"));
        }
    }
    if spec.energy_pmf.is_empty() {
        return bad("energy pmf is empty".into());
    }
    if let Some(q) = spec.energy_pmf.iter().find(|q| !q.is_finite() || **q < 0.0) {
        return bad(format!("energy pmf has invalid entry {q}"));
    }
    let total: f64 = spec.energy_pmf.iter().sum();
    if (total - 1.0).abs() > PMF_SUM_TOL {
        return bad(format!("energy pmf sums to {total}, expected 1"));
    }
    if spec.e_sense == 0 {
        return bad("sensing cost must be positive".into());
    }
    if spec.e_sense >= spec.e_tx {
        return bad(format!(
            "sensing cost {} must be below transmission cost {}",
            spec.e_sense, spec.e_tx
        ));
    }
    if spec.e_tx > spec.b_max {
        return bad(format!(
            "transmission cost {} exceeds battery capacity {}",
            spec.e_tx, spec.b_max
        ));
    }
    if !spec.r_low.is_finite() || spec.r_low < 0.0 {
        return bad(format!("r_low = {} must be nonnegative", spec.r_low));
    }
    if !spec.r_high.is_finite() || spec.r_high <= 0.0 {
        return bad(format!("r_high = {} must be positive", spec.r_high));
    }
    if spec.r_low >= spec.r_high {
        return bad(format!("r_low = {} must be below r_high = {}", spec.r_low, spec.r_high));
    }
    if !(0.0..1.0).contains(&spec.beta) {
        return bad(format!("beta = {} must lie in [0, 1)", spec.beta));
    }
    Ok(())
}

/// Transmitter actions, in the fixed tie-break order D < L < OD < OT < H.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    /// Stay idle.
    Defer,
    /// Transmit at the low rate without sensing.
    LowRate,
    /// Sense; transmit at the high rate on GOOD, defer on BAD.
    SenseDefer,
    /// Sense; transmit at the high rate on GOOD, at the low rate on BAD.
    SenseTransmit,
    /// Transmit at the high rate without sensing.
    HighRate,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Defer,
        Action::LowRate,
        Action::SenseDefer,
        Action::SenseTransmit,
        Action::HighRate,
    ];

    /// Integer code used in region CSVs: D=0, L=1, OD=2, OT=3, H=4.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Defer => "D",
            Action::LowRate => "L",
            Action::SenseDefer => "OD",
            Action::SenseTransmit => "OT",
            Action::HighRate => "H",
        }
    }

    pub fn senses(self) -> bool {
        matches!(self, Action::SenseDefer | Action::SenseTransmit)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D" => Ok(Action::Defer),
            "L" => Ok(Action::LowRate),
            // single-rate models call the sensing action plain "O"
            "OD" | "O" => Ok(Action::SenseDefer),
            "OT" => Ok(Action::SenseTransmit),
            "H" => Ok(Action::HighRate),
            other => Err(Error::InvalidParams(format!("unknown action label {other:?}"))),
        }
    }
}

/// A subset of [`Action::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const ALL: ActionSet = ActionSet(0b1_1111);
    /// The transmit-or-wait action set of the single-threshold baseline.
    pub const DEFER_OR_HIGH: ActionSet = ActionSet(0b1_0001);

    pub fn of(actions: &[Action]) -> Self {
        actions.iter().fold(Self::EMPTY, |s, &a| s.with(a))
    }

    pub fn with(self, action: Action) -> Self {
        ActionSet(self.0 | (1 << action.index()))
    }

    pub fn contains(self, action: Action) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn intersect(self, other: ActionSet) -> Self {
        ActionSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

/// `(battery, belief)` where belief = Pr[channel GOOD | history].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub battery: u32,
    pub belief: f64,
}

impl SystemState {
    pub fn new(battery: u32, belief: f64) -> Self {
        Self { battery, belief }
    }
}

/// Channel state information obtained during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelObservation {
    /// High-rate transmission acknowledged: the channel was GOOD.
    AckHigh,
    /// High-rate transmission failed: the channel was BAD.
    NackHigh,
    SensedGood,
    SensedBad,
    /// No channel state information (defer or low-rate transmission).
    None,
}

impl ChannelObservation {
    /// The observation produced by `action` when the channel is in state `good`.
    pub fn produced_by(action: Action, good: bool) -> Self {
        match (action, good) {
            (Action::HighRate, true) => ChannelObservation::AckHigh,
            (Action::HighRate, false) => ChannelObservation::NackHigh,
            (Action::SenseDefer | Action::SenseTransmit, true) => ChannelObservation::SensedGood,
            (Action::SenseDefer | Action::SenseTransmit, false) => ChannelObservation::SensedBad,
            (Action::Defer | Action::LowRate, _) => ChannelObservation::None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelObservation::AckHigh => "ack",
            ChannelObservation::NackHigh => "nack",
            ChannelObservation::SensedGood => "sensed-good",
            ChannelObservation::SensedBad => "sensed-bad",
            ChannelObservation::None => "none",
        }
    }
}

/// Actions available at `battery`.
///
/// Below the sensing cost only `D` is possible; between the sensing and the
/// transmission cost the transmitter may still sense (`OD` without a
/// transmission). `L` and `OT` are dropped in single-rate models.
pub fn feasible_actions(battery: u32, params: &SystemParams) -> ActionSet {
    let mut set = ActionSet::EMPTY.with(Action::Defer);
    if battery >= params.e_sense() {
        set = set.with(Action::SenseDefer);
    }
    if battery >= params.e_tx() {
        set = set.with(Action::HighRate);
        if !params.is_single_rate() {
            set = set.with(Action::LowRate).with(Action::SenseTransmit);
        }
    }
    set
}

pub fn is_feasible(battery: u32, action: Action, params: &SystemParams) -> bool {
    feasible_actions(battery, params).contains(action)
}

/// Expected number of bits delivered in one slot.
///
/// Infeasible actions earn nothing, as does sensing below the transmission
/// cost.
pub fn expected_reward(state: SystemState, action: Action, params: &SystemParams) -> f64 {
    if state.battery < params.e_tx() {
        return 0.0;
    }
    let p = state.belief;
    let keep = 1.0 - params.tau();
    match action {
        Action::Defer => 0.0,
        Action::LowRate => params.r_low(),
        Action::HighRate => p * params.r_high(),
        Action::SenseDefer => keep * p * params.r_high(),
        Action::SenseTransmit => keep * ((1.0 - p) * params.r_low() + p * params.r_high()),
    }
}

/// Energy debited by `action` before the harvest is credited.
pub fn energy_spent(battery: u32, action: Action, channel_good: bool, params: &SystemParams) -> u32 {
    match action {
        Action::Defer => 0,
        Action::LowRate | Action::HighRate | Action::SenseTransmit => params.e_tx(),
        Action::SenseDefer if battery >= params.e_tx() && channel_good => params.e_tx(),
        Action::SenseDefer => params.e_sense(),
    }
}

/// Battery level at the start of the next slot.
pub fn next_battery(
    battery: u32,
    harvest: u32,
    action: Action,
    channel_good: bool,
    params: &SystemParams,
) -> Result<u32> {
    if battery > params.b_max() || !is_feasible(battery, action, params) {
        return Err(Error::InfeasibleAction { action, battery });
    }
    let spent = energy_spent(battery, action, channel_good, params);
    Ok((battery - spent).saturating_add(harvest).min(params.b_max()))
}
