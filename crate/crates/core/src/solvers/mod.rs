//! Optimizers for the maximum-likelihood problems: L-BFGS for the smooth
//! problem (optionally with rows pinned at zero) and SpaRSA for the
//! group-ℓ1-penalized one.

mod groups;
mod lbfgs;
mod sparsa;

pub use groups::{group_prox, group_prox_each, GroupPartition};
pub use lbfgs::{debias, lbfgs_maximize, LbfgsResult};
pub use sparsa::{sparsa_solve, write_trace_csv, RegularizedSolution, Termination, TraceRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlr::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid group partition: {0}")]
    Partition(String),
    #[error("invalid solver input: {0}")]
    Input(String),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// L-BFGS iteration cap.
    pub max_iterations: usize,
    /// L-BFGS stops when the ∞-norm of the free gradient falls below this.
    pub gradient_tolerance: f64,
    pub lbfgs_memory: usize,
    /// Adds `ridge · ‖β‖²_F` to the smooth objective; 0 disables it.
    pub ridge: f64,
    pub sparsa_max_iterations: usize,
    pub sparsa_alpha_min: f64,
    pub sparsa_alpha_max: f64,
    pub sufficient_decrease: f64,
    /// SpaRSA stops when the relative objective change falls below this.
    pub objective_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: 1e-6,
            lbfgs_memory: 10,
            ridge: 0.0,
            sparsa_max_iterations: 20_000,
            sparsa_alpha_min: 1e-8,
            sparsa_alpha_max: 1e12,
            sufficient_decrease: 1e-4,
            objective_tolerance: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Input(m.into()));
        if !(self.gradient_tolerance > 0.0) || !(self.objective_tolerance > 0.0) || !(self.sufficient_decrease > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be at least 1");
        }
        if !(self.sparsa_alpha_min > 0.0 && self.sparsa_alpha_min < self.sparsa_alpha_max) {
            return bad("need 0 < sparsa_alpha_min < sparsa_alpha_max");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be non-negative");
        }
        Ok(())
    }
}
