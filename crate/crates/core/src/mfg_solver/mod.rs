//! Mean-field equilibrium search over piecewise-constant contracts: the
//! principal's survival-weighted objective, a coordinate-ascent best
//! response, and a damped fixed-point iteration on the flow of values.

mod fixed_point;
mod objective;
mod search;

pub use fixed_point::{
    equilibrium_defect, fixed_point, DefectReport, EquilibriumResult, EquilibriumSeeds,
    EQUILIBRIUM_FLOW_CSV, EQUILIBRIUM_JSON,
};
pub(crate) use objective::path_objective;
pub use objective::{principal_objective, AtomObjective, ObjectiveEstimate};
pub use search::{best_response, BestResponse, GridParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfgConfig {
    /// Lowest admissible initial value `R`.
    pub reservation: f64,
    /// Support of `λ` is `n_atoms` equally spaced points in `[R, R + support_width]`.
    pub support_width: f64,
    pub n_atoms: usize,
    /// `λ` weights move on the simplex grid with step `1 / lambda_resolution`.
    pub lambda_resolution: usize,
    /// Volatility grid `{0, η_max / (n_eta - 1), ..., η_max}`.
    pub eta_max: f64,
    pub n_eta: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub n_wage: usize,
    pub n_time_blocks: usize,
    pub damping: f64,
    /// Lower bound for the damping after stalls.
    pub min_damping: f64,
    pub max_fp_iters: usize,
    pub tol_fp: f64,
    /// Brownian paths per objective evaluation.
    pub mc_paths: usize,
    /// Samples representing the flow `p`.
    pub flow_samples: usize,
    pub max_sweeps: usize,
}

impl Default for MfgConfig {
    fn default() -> Self {
        MfgConfig {
            reservation: 1.0,
            support_width: 1.0,
            n_atoms: 9,
            lambda_resolution: 4,
            eta_max: 1.0,
            n_eta: 5,
            w_min: 0.0,
            w_max: 0.6,
            n_wage: 7,
            n_time_blocks: 4,
            damping: 0.5,
            min_damping: 0.05,
            max_fp_iters: 40,
            tol_fp: 1e-3,
            mc_paths: 1000,
            flow_samples: 1000,
            max_sweeps: 8,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl MfgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mfg.{m}")));
        if self.n_atoms == 0 || self.n_eta == 0 || self.n_wage == 0 || self.n_time_blocks == 0 {
            return bad("grids must be nonempty");
        }
        if self.lambda_resolution == 0 {
            return bad("lambda_resolution must be >= 1");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must be in (0, 1]");
        }
        if !(self.min_damping > 0.0 && self.min_damping <= self.damping) {
            return bad("min_damping must be in (0, damping]");
        }
        if !(self.tol_fp > 0.0) {
            return bad("tol_fp must be > 0");
        }
        if !(self.support_width >= 0.0 && self.eta_max >= 0.0 && self.w_max >= self.w_min) {
            return bad("support_width and eta_max must be >= 0 and w_max >= w_min");
        }
        if !self.reservation.is_finite() || !self.w_min.is_finite() || !self.w_max.is_finite() {
            return bad("reservation and wage bounds must be finite");
        }
        if self.mc_paths < 2 || self.flow_samples < 2 {
            return bad("mc_paths and flow_samples must be >= 2");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be >= 1");
        }
        Ok(())
    }

    pub fn atoms(&self) -> Vec<f64> {
        linspace(
            self.reservation,
            self.reservation + self.support_width,
            self.n_atoms,
        )
    }

    pub fn eta_grid(&self) -> Vec<f64> {
        linspace(0.0, self.eta_max, self.n_eta)
    }

    pub fn wage_grid(&self) -> Vec<f64> {
        linspace(self.w_min, self.w_max, self.n_wage)
    }
}

#[cfg(test)]
mod tests;
