use thiserror::Error;

use crate::model::Action;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("action {action} is infeasible at battery level {battery}")]
    InfeasibleAction { action: Action, battery: u32 },

    #[error("belief dynamics are degenerate: {0}")]
    DegenerateChannel(String),

    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("battery row {battery} violates the threshold structure: {detail}")]
    StructureViolation { battery: u32, detail: String },

    #[error("instance too large for the exact oracle: {0}")]
    InstanceTooLarge(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}
