//! Experiment configuration: a TOML file with a `[model]` table and optional
//! `[solver]`, `[simulation]`, `[sweep]`, `[search]`, `[verify]` and
//! `[output]` tables.

use std::path::{Path, PathBuf};

use ehsense::model::two_point_pmf;
use ehsense::search::SearchConfig;
use ehsense::sim::InitialConditions;
use ehsense::solver::{default_max_iter, SolverConfig};
use ehsense::{ActionSet, BeliefGrid, ParamSpec, SystemParams, SystemState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// How far `tau * e_tx` may sit from an integer.
const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Model constants. The sensing cost is given either as `tau` or as
/// `e_sense`; the harvest either as `harvest_amount` with `harvest_prob`, or
/// as a full `energy_pmf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub b_max: u32,
    pub e_tx: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_sense: Option<u32>,
    #[serde(default)]
    pub r_low: f64,
    pub r_high: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest_amount: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_pmf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub grid_points: usize,
    pub tol: f64,
    /// Defaults to `100 * ceil(1 / (1 - beta))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            grid_points: 1001,
            tol: 1e-9,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Starting battery; 0 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_battery: Option<u32>,
    /// Starting belief, also the probability that the first slot is GOOD.
    /// The stationary belief when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_belief: Option<f64>,
    /// `optimal`, `single-threshold`, `greedy`, `opportunistic`, or
    /// `file:PATH` for a saved threshold policy.
    pub policies: Vec<String>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            episodes: 30,
            horizon: 100_000,
            seed: 1,
            initial_battery: None,
            initial_belief: None,
            policies: ["optimal", "single-threshold", "greedy", "opportunistic"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Lists replace the model's `harvest_prob` and `tau`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

/// Threshold search runs on its own draws; the result is scored on the
/// `[simulation]` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub episodes: usize,
    pub horizon: usize,
    /// Defaults to the simulation seed plus one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_passes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<f64>>,
    /// Threshold file to start from instead of the value-iteration policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            episodes: 10,
            horizon: 100_000,
            seed: None,
            max_passes: 2,
            candidates: None,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Subset of `oracle`, `values`, `dominance`, `structure`.
    pub checks: Vec<String>,
    pub oracle_horizon: usize,
    /// Dominance is checked only above this belief.
    pub dominance_min_belief: f64,
    pub dominance_tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            checks: VERIFY_CHECKS.map(String::from).to_vec(),
            oracle_horizon: 8,
            dominance_min_belief: 0.05,
            dominance_tol: 1e-6,
        }
    }
}

pub const VERIFY_CHECKS: [&str; 4] = ["oracle", "values", "dominance", "structure"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// One model instance of the sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Probability of a nonzero harvest.
    pub q: f64,
    pub tau: f64,
    pub params: SystemParams,
}

impl SweepPoint {
    /// File name stem, e.g. `q0.1_tau0.2`.
    pub fn label(&self) -> String {
        format!("q{}_tau{}", self.q, self.tau)
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if m.tau.is_some() == m.e_sense.is_some() {
            return Err(invalid("model needs exactly one of tau and e_sense"));
        }
        let two_point = m.harvest_amount.is_some() || m.harvest_prob.is_some();
        if two_point == m.energy_pmf.is_some() {
            return Err(invalid(
                "model needs either harvest_amount with harvest_prob, or energy_pmf",
            ));
        }
        if two_point && m.harvest_amount.is_none() {
            return Err(invalid("harvest_prob needs harvest_amount"));
        }
        if two_point && m.harvest_prob.is_none() && self.sweep.q.is_none() {
            return Err(invalid("harvest_amount needs harvest_prob or a q sweep"));
        }
        if self.sweep.q.is_some() && m.harvest_amount.is_none() {
            return Err(invalid("a q sweep needs harvest_amount"));
        }
        for (name, list) in [("q", &self.sweep.q), ("tau", &self.sweep.tau)] {
            if list.as_ref().is_some_and(|l| l.is_empty()) {
                return Err(invalid(format!("sweep list {name} is empty")));
            }
        }
        let s = &self.solver;
        BeliefGrid::new(s.grid_points).map_err(|e| invalid(e.to_string()))?;
        if s.tol.is_nan() || s.tol <= 0.0 || s.max_iter == Some(0) {
            return Err(invalid("solver needs tol > 0 and max_iter >= 1"));
        }
        let sim = &self.simulation;
        if sim.episodes == 0 || sim.horizon == 0 {
            return Err(invalid("simulation needs episodes and horizon >= 1"));
        }
        if sim.policies.is_empty() {
            return Err(invalid("simulation policy list is empty"));
        }
        for p in &sim.policies {
            if !(POLICY_NAMES.contains(&p.as_str()) || p.starts_with("file:")) {
                return Err(invalid(format!("unknown policy {p}")));
            }
        }
        for c in &self.verify.checks {
            if !VERIFY_CHECKS.contains(&c.as_str()) {
                return Err(invalid(format!("unknown verify check {c}")));
            }
        }
        // builds and validates every model in the sweep
        for point in self.points()? {
            self.initial_conditions(&point.params)?;
        }
        self.search_config_for(&self.points()?[0].params)?;
        Ok(())
    }

    /// Every `(tau, q)` combination, `tau` outermost.
    pub fn points(&self) -> Result<Vec<SweepPoint>, CliError> {
        let m = &self.model;
        let taus = match (&self.sweep.tau, m.tau, m.e_sense) {
            (Some(list), _, _) => list.clone(),
            (None, Some(t), _) => vec![t],
            (None, None, Some(e)) => vec![f64::from(e) / f64::from(m.e_tx.max(1))],
            (None, None, None) => unreachable!("checked in validate"),
        };
        let qs: Vec<Option<f64>> = match (&self.sweep.q, m.harvest_prob) {
            (Some(list), _) => list.iter().copied().map(Some).collect(),
            (None, q) => vec![q],
        };
        let mut out = Vec::with_capacity(taus.len() * qs.len());
        for &tau in &taus {
            let e_sense = match (&self.sweep.tau, m.e_sense) {
                (None, Some(e)) => e,
                _ => sense_cost(tau, m.e_tx)?,
            };
            for &q in &qs {
                let energy_pmf = match (q, &m.energy_pmf) {
                    (Some(q), _) => {
                        if !(0.0..=1.0).contains(&q) {
                            return Err(invalid(format!("q = {q} is not a probability")));
                        }
                        two_point_pmf(m.harvest_amount.unwrap_or(0), q)
                    }
                    (None, Some(pmf)) => pmf.clone(),
                    (None, None) => unreachable!("checked in validate"),
                };
                let q = q.unwrap_or_else(|| 1.0 - energy_pmf[0]);
                let params = SystemParams::new(ParamSpec {
                    lambda0: m.lambda0,
                    lambda1: m.lambda1,
                    energy_pmf,
                    b_max: m.b_max,
                    e_tx: m.e_tx,
                    e_sense,
                    r_low: m.r_low,
                    r_high: m.r_high,
                    beta: m.beta,
                })
                .map_err(|e| invalid(e.to_string()))?;
                out.push(SweepPoint { q, tau, params });
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> BeliefGrid {
        BeliefGrid::new(self.solver.grid_points).expect("validated")
    }

    pub fn solver_config(&self, params: &SystemParams) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iter: Some(self.max_iter(params)),
            actions: ActionSet::ALL,
        }
    }

    pub fn max_iter(&self, params: &SystemParams) -> usize {
        self.solver.max_iter.unwrap_or_else(|| default_max_iter(params.beta()))
    }

    pub fn initial_conditions(&self, params: &SystemParams) -> Result<InitialConditions, CliError> {
        let sim = &self.simulation;
        let mut init = InitialConditions::stationary(params).map_err(|e| invalid(e.to_string()))?;
        if let Some(b) = sim.initial_battery {
            if b > params.b_max() {
                return Err(invalid(format!("initial battery {b} exceeds b_max")));
            }
            init.state = SystemState::new(b, init.state.belief);
        }
        if let Some(p) = sim.initial_belief {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("initial belief {p} is not a probability")));
            }
            init.state = SystemState::new(init.state.battery, p);
            init.good_prob = p;
        }
        Ok(init)
    }

    pub fn search_config_for(&self, params: &SystemParams) -> Result<SearchConfig, CliError> {
        let s = &self.search;
        let mut config = SearchConfig::with_defaults(params, s.seed.unwrap_or(self.simulation.seed.wrapping_add(1)));
        config.episodes = s.episodes;
        config.horizon = s.horizon;
        config.max_passes = s.max_passes;
        if let Some(c) = &s.candidates {
            let mut c = c.clone();
            c.sort_by(f64::total_cmp);
            config.candidates = c;
        }
        config.initial = Some(self.initial_conditions(params)?);
        let sorted_in_range = config.candidates.iter().all(|c| (0.0..=1.0).contains(c));
        if config.episodes == 0 || config.horizon == 0 || config.max_passes == 0 || !sorted_in_range {
            return Err(invalid(
                "search needs episodes, horizon, passes >= 1 and candidates in [0, 1]",
            ));
        }
        Ok(config)
    }

    /// Hex SHA-256 of the effective configuration after overrides. The
    /// output directory is left out: it does not affect any result.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output = OutputSection::default();
        let text = toml::to_string(&hashed).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub const POLICY_NAMES: [&str; 4] = ["optimal", "single-threshold", "greedy", "opportunistic"];

/// `tau * e_tx`, which must be a whole number of energy units.
fn sense_cost(tau: f64, e_tx: u32) -> Result<u32, CliError> {
    let e = tau * f64::from(e_tx);
    let r = e.round();
    if !(0.0..=1.0).contains(&tau) || (e - r).abs() > INTEGRALITY_TOL {
        return Err(invalid(format!(
            "tau = {tau} does not give a whole number of energy units with e_tx = {e_tx}"
        )));
    }
    Ok(r as u32)
}
