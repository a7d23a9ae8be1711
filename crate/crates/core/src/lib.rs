//! Numerical laboratory for a multi-principal, single-agent moral-hazard model
//! with randomized switching: coupled BSDE solvers for the agent, a switching
//! simulator, a mean-field equilibrium search and convergence experiments.

pub mod agent_bsde;
pub mod chaos_experiments;
pub mod cli;
pub mod cost_model;
pub mod error;
pub mod mfg_solver;
pub mod stochastic_core;
pub mod switching_simulator;
pub mod util;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
