//! Convergence studies around an equilibrium: the n-player value system
//! against independent copies of the mean-field value process, stability
//! ratios for the copy-vs-system gaps, and the principal's value as n grows.

mod report;
mod sweep;
mod value;

pub use report::{
    to_stable_json, write_chaos_report, write_lemma_report, write_manifest, write_value_table,
    Manifest, ReportFormat, CHAOS_CSV_HEADER, LEMMA_CSV_HEADER, VALUE_CSV_HEADER,
};
pub use sweep::{
    chaos_sweep, lemma_estimates_check, ChaosReport, ChaosRow, LemmaReport, Ratio, RepStats,
};
pub use value::{value_convergence, ValueRow, ValueTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// Brownian paths per replication (regression sample of the n-player solver).
    pub paths_per_rep: usize,
    /// Paths per replication on which the empirical measure is compared with the reference.
    pub eval_paths: usize,
    /// Samples of the mean-field law used as the reference.
    pub reference_size: usize,
    /// Half-vs-half draws used to estimate the reference error floor.
    pub floor_draws: usize,
    pub assignment_cap: usize,
    /// Largest tolerated fraction of failed replications per `n`.
    pub max_fail_fraction: f64,
    /// Paths for the mean-field value in the value study.
    pub mf_paths: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_list: vec![4, 8, 16, 32, 64],
            reps: 20,
            paths_per_rep: 512,
            eval_paths: 8,
            reference_size: 4096,
            floor_draws: 64,
            assignment_cap: crate::stochastic_core::DEFAULT_ASSIGNMENT_CAP,
            max_fail_fraction: 0.1,
            mf_paths: 20_000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return Err(Error::Config("sweep.n_list needs entries >= 2".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sweep.n_list must be strictly ascending".into(),
            ));
        }
        if self.reps == 0 {
            return Err(Error::Config("sweep.reps must be >= 1".into()));
        }
        if self.eval_paths == 0 || self.eval_paths > self.paths_per_rep {
            return Err(Error::Config(
                "sweep.eval_paths must be in 1..=paths_per_rep".into(),
            ));
        }
        let largest = *self.n_list.last().unwrap();
        if self.reference_size < 2 * largest {
            return Err(Error::Config(format!(
                "sweep.reference_size must be at least twice the largest n ({largest})"
            )));
        }
        if self.floor_draws == 0 {
            return Err(Error::Config("sweep.floor_draws must be >= 1".into()));
        }
        if self.mf_paths < 2 {
            return Err(Error::Config("sweep.mf_paths must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.max_fail_fraction) {
            return Err(Error::Config(
                "sweep.max_fail_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
