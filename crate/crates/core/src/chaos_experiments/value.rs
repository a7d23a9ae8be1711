use rayon::prelude::*;
use serde::Serialize;

use super::sweep::{split, Context, VALUE_TAG};
use super::SweepConfig;
use crate::agent_bsde::{PlayerContract, RegressionConfig};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::mfg_solver::{path_objective, principal_objective, EquilibriumResult};
use crate::stochastic_core::{generate_brownian, TimeGrid};
use crate::switching_simulator::{principal_value_weighted_cv, SwitchingSystem, UtilitySpec};
use crate::util::{derive_seed, mean_stderr};

const MF_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, Serialize)]
pub struct ValueRow {
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    /// Principal 1's value, averaged over replications.
    pub value: f64,
    /// Standard error across replications.
    pub stderr: f64,
    /// `|E[V^n - V^MF]|` with both sides on the replication's paths (principal 1's
    /// initial value and output noise shared).
    pub gap: f64,
    pub gap_stderr: f64,
    /// Signed mean of the paired differences.
    pub difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueTable {
    pub rows: Vec<ValueRow>,
    /// Mean-field value of the equilibrium contract against its flow, on `mf_paths` fresh paths.
    pub value_mf: f64,
    pub value_mf_stderr: f64,
    pub mf_paths: usize,
    /// The value recorded by the equilibrium search (on its own optimization paths).
    pub value_equilibrium: f64,
    pub value_equilibrium_stderr: f64,
    pub paths_per_rep: usize,
    pub grid: TimeGrid,
    pub utility: UtilitySpec,
    pub seed: u64,
    pub config_hash: Option<String>,
}

/// Principal 1's value when all `n` principals offer the equilibrium
/// contract, by the survival-weighted estimator on the n-player solution
/// (every output carrying drift 1), against the mean-field value of the same
/// contract and flow. The gap is estimated path by path against the
/// mean-field value on the same paths; `value_mf` is the mean-field value on
/// a separate large sample.
pub fn value_convergence(
    eq: &EquilibriumResult,
    cfg: &SweepConfig,
    cost: &CostSpec,
    reg: &RegressionConfig,
    utility: &UtilitySpec,
    seed: u64,
) -> Result<ValueTable> {
    cfg.validate()?;
    utility.validate()?;
    if !utility.is_bounded() {
        return Err(Error::Config(
            "value convergence needs a bounded utility (finite cap)".into(),
        ));
    }
    let ctx = Context::new(eq, cost, reg, 2, seed)?;
    let mf_bundle = generate_brownian(
        ctx.grid,
        cfg.mf_paths,
        1,
        derive_seed(seed, &[VALUE_TAG, MF_TAG]),
    )?;
    let mf = principal_objective(&eq.contract, &eq.flow, &mf_bundle, cost, utility)?;
    let cells: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = cells
        .into_par_iter()
        .map(|(n, rep)| {
            let s = derive_seed(seed, &[VALUE_TAG, n as u64, rep as u64]);
            let (sol, bundle) = ctx.solve(n, cfg.paths_per_rep, s, vec![1.0; n], false)?;
            let system = SwitchingSystem::with_lambda(
                ctx.grid,
                vec![PlayerContract::MeanField(ctx.contract.clone()); n],
                vec![ctx.lambda.clone(); n],
                *utility,
                *cost,
            )?;
            let v = principal_value_weighted_cv(0, &sol, &system, &bundle)?.estimate;
            let mf_here = (0..sol.n_paths)
                .map(|p| {
                    let dw = |k: usize| bundle.increment(p, k, 0);
                    path_objective(&ctx.contract, sol.initial_value(0, p), &dw, utility)
                })
                .sum::<f64>()
                / sol.n_paths as f64;
            Ok((v, v - mf_here))
        })
        .collect();
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let (values, failed) = split(cfg, n, results.by_ref().take(cfg.reps))?;
        let e = mean_stderr(&values.iter().map(|v| v.0).collect::<Vec<_>>());
        let d = mean_stderr(&values.iter().map(|v| v.1).collect::<Vec<_>>());
        rows.push(ValueRow {
            n,
            replications: values.len(),
            failed,
            value: e.mean,
            stderr: e.stderr,
            gap: d.mean.abs(),
            gap_stderr: d.stderr,
            difference: d.mean,
        });
    }
    Ok(ValueTable {
        rows,
        value_mf: mf.j,
        value_mf_stderr: mf.stderr,
        mf_paths: cfg.mf_paths,
        value_equilibrium: eq.value,
        value_equilibrium_stderr: eq.value_stderr,
        paths_per_rep: cfg.paths_per_rep,
        grid: ctx.grid,
        utility: *utility,
        seed,
        config_hash: None,
    })
}
