use std::sync::Arc;

use rayon::prelude::*;

use crate::agent_bsde::{ContractSpec, MeanFieldContract};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{EmpiricalMarginal, MeasureFlow, PathBundle};
use crate::switching_simulator::UtilitySpec;
use crate::util::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub j: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

/// Per-path objective values for one initial value, under fixed schedules.
#[derive(Debug, Clone)]
pub struct AtomObjective {
    /// One entry per bundle path, or a single exact value when the value
    /// process does not depend on the output.
    pub values: Vec<f64>,
}

impl AtomObjective {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Path value of `Σ_k β_k (1 - U(w_k)) dt - β_N U(Ȳ_N)`, the survival-weighted
/// reward with the output term written as `Σ_k β_k dX_k` and its martingale
/// part `Σ_k β_k dW_k` (mean zero, `β_k` known at step `k`) removed.
/// `dw = None` runs the value process without noise.
fn path_value(
    contract: &MeanFieldContract,
    y0: f64,
    dw: Option<&dyn Fn(usize) -> f64>,
    utility: &UtilitySpec,
) -> f64 {
    let grid = contract.grid;
    let dt = grid.dt();
    let mut y = y0;
    let mut log_beta = 0.0_f64;
    let mut acc = 0.0;
    for k in 0..grid.n_steps {
        let alpha = contract.marginals[k].mean_argmax(y);
        let beta = log_beta.exp();
        let dx = dt + dw.map(|f| f(k)).unwrap_or(0.0);
        y = contract.advance(k, y, dx);
        acc += beta * (1.0 - utility.eval(contract.wage[k])) * dt;
        log_beta -= alpha * dt;
    }
    acc - log_beta.exp() * utility.eval(y)
}

/// Objective value on one path with output noise `dw(k)` at step `k`.
pub(crate) fn path_objective(
    contract: &MeanFieldContract,
    y0: f64,
    dw: &dyn Fn(usize) -> f64,
    utility: &UtilitySpec,
) -> f64 {
    path_value(contract, y0, Some(dw), utility)
}

/// Objective values for initial value `y0` on every bundle path (coordinate 0).
pub(crate) fn atom_objective(
    contract: &MeanFieldContract,
    y0: f64,
    bundle: &PathBundle,
    utility: &UtilitySpec,
) -> AtomObjective {
    if contract.sqrt_eta.iter().all(|s| *s == 0.0) {
        return AtomObjective {
            values: vec![path_value(contract, y0, None, utility)],
        };
    }
    let values = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let f = |k: usize| bundle.increment(p, k, 0);
            path_value(contract, y0, Some(&f), utility)
        })
        .collect();
    AtomObjective { values }
}

/// Combines per-atom values with the `λ` weights path by path (common paths across atoms).
pub(crate) fn combine(atoms: &[(f64, &AtomObjective)]) -> ObjectiveEstimate {
    let len = atoms.iter().map(|(_, a)| a.values.len()).max().unwrap_or(0);
    let combined: Vec<f64> = (0..len)
        .map(|p| {
            atoms
                .iter()
                .map(|(w, a)| {
                    w * if a.values.len() == 1 {
                        a.values[0]
                    } else {
                        a.values[p]
                    }
                })
                .sum()
        })
        .collect();
    let e = mean_stderr(&combined);
    ObjectiveEstimate {
        j: e.mean,
        stderr: if len == 1 { 0.0 } else { e.stderr },
        n_paths: len,
    }
}

pub(crate) fn contract_against(
    params: &ContractSpec,
    p: &MeasureFlow,
    marginals: Arc<Vec<EmpiricalMarginal>>,
) -> Result<MeanFieldContract> {
    MeanFieldContract::with_marginals(params, p.grid, marginals)
}

/// The principal's objective for `params` against the flow `p`: the value
/// process is built forward with the output carrying drift 1, `α*` and `β*`
/// come from `p`, and the initial-value law `λ` is integrated exactly over
/// its atoms with the same Brownian paths for every atom.
pub fn principal_objective(
    params: &ContractSpec,
    p: &MeasureFlow,
    bundle: &PathBundle,
    cost: &CostSpec,
    utility: &UtilitySpec,
) -> Result<ObjectiveEstimate> {
    if !p.grid.same_as(&bundle.grid) {
        return Err(Error::GridMismatch("flow and bundle grids differ".into()));
    }
    params.lambda.validate()?;
    let contract = contract_against(params, p, Arc::new(p.marginals(cost)))?;
    let per_atom: Vec<(f64, AtomObjective)> = params
        .lambda
        .support()
        .map(|(a, w)| (w, atom_objective(&contract, a, bundle, utility)))
        .collect();
    let refs: Vec<(f64, &AtomObjective)> = per_atom.iter().map(|(w, a)| (*w, a)).collect();
    Ok(combine(&refs))
}
