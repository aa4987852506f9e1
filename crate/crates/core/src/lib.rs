//! Solver and simulation toolkit for an energy-harvesting transmitter that can
//! sense a two-state Markov (Gilbert-Elliott) channel before transmitting.
//!
//! The transmitter state is `(battery, belief)`, where the belief is the
//! posterior probability that the channel is GOOD. The crate provides:
//!
//! - [`model`]: parameters, actions, expected rewards and the battery kernel.
//! - [`belief`]: belief propagation and the discretized belief grid.
//! - [`solver`]: per-action Bellman backups and value iteration.
//! - [`policy`]: greedy extraction, threshold extraction and baseline policies.
//! - [`search`]: coordinate-ascent threshold search on simulated throughput.
//! - [`sim`]: Monte Carlo simulation of the channel, harvester and protocol.
//! - [`verify`]: an exact finite-horizon oracle and structural property checks.

pub mod belief;
pub mod error;
pub mod model;
pub mod policy;
pub mod search;
pub mod sim;
pub mod solver;
pub mod verify;

pub use belief::BeliefGrid;
pub use error::{Error, Result};
pub use model::{Action, ActionSet, ChannelObservation, ParamSpec, SystemParams, SystemState};
pub use policy::{Policy, PolicyTable, ThresholdPolicy};
pub use sim::ThroughputStats;
pub use solver::ValueTable;
