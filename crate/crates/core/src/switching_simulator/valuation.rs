use rayon::prelude::*;
use serde::Serialize;

use super::policy::{ConstantRates, IntensityPolicy, OptimalPolicy};
use super::simulate::{simulate_switching, SimSetup, SwitchingSystem};
use crate::agent_bsde::{BsdeSolution, PlayerContract};
use crate::error::{Error, Result};
use crate::stochastic_core::PathBundle;
use crate::util::{mean_stderr, round_g12, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueSeeds {
    pub brownian: u64,
    pub jumps: Option<u64>,
}

/// Monte Carlo value estimate as exported to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n_sims: usize,
    pub seeds: ValueSeeds,
}

impl ValueReport {
    fn from_estimate(e: Estimate, seeds: ValueSeeds) -> Self {
        ValueReport {
            estimate: e.mean,
            stderr: e.stderr,
            n_sims: e.n,
            seeds,
        }
    }

    /// Copy with values rounded to the exported precision.
    pub fn rounded(&self) -> Self {
        ValueReport {
            estimate: round_g12(self.estimate),
            stderr: round_g12(self.stderr),
            ..*self
        }
    }

    /// `|a - b|` in units of the combined standard error.
    pub fn z_against(&self, other: &ValueReport) -> f64 {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        let d = (self.estimate - other.estimate).abs();
        if se > 0.0 {
            d / se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn seeds_of(setup: &SimSetup) -> ValueSeeds {
    ValueSeeds {
        brownian: setup.seed_brownian,
        jumps: Some(setup.seed_jumps),
    }
}

/// Agent's expected payoff under an arbitrary intensity policy.
pub fn agent_value_under<P: IntensityPolicy>(
    policy: &P,
    system: &SwitchingSystem,
    setup: &SimSetup,
) -> Result<ValueReport> {
    let tr = simulate_switching(policy, system, setup)?;
    let payoffs: Vec<f64> = tr.iter().map(|t| t.agent_payoff).collect();
    Ok(ValueReport::from_estimate(
        mean_stderr(&payoffs),
        seeds_of(setup),
    ))
}

/// Agent's expected payoff when switching at the optimal intensity read from `sol`.
pub fn agent_value_mc(
    sol: &BsdeSolution,
    system: &SwitchingSystem,
    setup: &SimSetup,
) -> Result<ValueReport> {
    check_solution(sol, system)?;
    agent_value_under(&OptimalPolicy::new(sol, system.cost), system, setup)
}

/// Agent's payoff when never leaving `setup.i0`.
pub fn stay_put_agent_value(system: &SwitchingSystem, setup: &SimSetup) -> Result<ValueReport> {
    agent_value_under(&ConstantRates::zero(system.n()), system, setup)
}

/// Principal `i`'s reward simulated with the agent starting in regime `i`
/// and switching optimally.
pub fn principal_value_direct(
    i: usize,
    sol: &BsdeSolution,
    system: &SwitchingSystem,
    setup: &SimSetup,
) -> Result<ValueReport> {
    check_solution(sol, system)?;
    let setup = SimSetup { i0: i, ..*setup };
    let tr = simulate_switching(&OptimalPolicy::new(sol, system.cost), system, &setup)?;
    let r: Vec<f64> = tr.iter().map(|t| t.principal_rewards[i]).collect();
    Ok(ValueReport::from_estimate(
        mean_stderr(&r),
        seeds_of(&setup),
    ))
}

/// Principal `i`'s reward with the jumps integrated out: on each path of the
/// solution (which must be solved with unit drift on output `i`; the other
/// outputs may carry any drift),
/// `Σ_k β_k (1 - e^{-α_k dt}) X^i_{k+1} - Σ_k β_k U(w^i_k) dt + β_N (X^i_N - U(ξ^i))`
/// where `α_k = (1/(n-1)) Σ_{j≠i} a*(Y^j_k - Y^i_k)` and `β_k = exp(-Σ_{m<k} α_m dt)`.
pub fn principal_value_weighted(
    i: usize,
    sol: &BsdeSolution,
    system: &SwitchingSystem,
    bundle: &PathBundle,
) -> Result<ValueReport> {
    weighted(i, sol, system, bundle, false)
}

/// As [`principal_value_weighted`] with the output term rewritten as
/// `Σ_k β_k dX^i_k` and its mean-zero part `Σ_k β_k dW^i_k` dropped, which
/// leaves `Σ_k β_k (1 - U(w^i_k)) dt - β_N U(ξ^i)`.
pub fn principal_value_weighted_cv(
    i: usize,
    sol: &BsdeSolution,
    system: &SwitchingSystem,
    bundle: &PathBundle,
) -> Result<ValueReport> {
    weighted(i, sol, system, bundle, true)
}

fn weighted(
    i: usize,
    sol: &BsdeSolution,
    system: &SwitchingSystem,
    bundle: &PathBundle,
    control_variate: bool,
) -> Result<ValueReport> {
    check_solution(sol, system)?;
    let n = sol.n_players;
    if i >= n {
        return Err(Error::Config(format!("principal {i} out of range 0..{n}")));
    }
    if sol.drift[i] != 1.0 {
        return Err(Error::Config(format!(
            "the weighted estimator for principal {i} needs a solution solved with unit drift on output {i}"
        )));
    }
    if bundle.seed != sol.bundle_seed
        || bundle.n_paths != sol.n_paths
        || !bundle.grid.same_as(&sol.grid)
    {
        return Err(Error::GridMismatch(
            "bundle does not match the solution's paths".into(),
        ));
    }
    let steps = sol.grid.n_steps;
    let dt = sol.grid.dt();
    let others = (n - 1) as f64;
    let contract = &system.contracts[i];
    let x0 = match contract {
        PlayerContract::Fixed { x0, .. } => *x0,
        PlayerContract::MeanField(_) => 0.0,
    };
    let u = system.utility;
    let cost = system.cost;
    let values: Vec<f64> = (0..sol.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut x = x0;
            let mut log_beta = 0.0_f64;
            let mut acc = 0.0;
            for k in 0..steps {
                let yi = sol.y(i, p, k);
                let alpha: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| cost.argmax_intensity(sol.y(j, p, k) - yi))
                    .sum::<f64>()
                    / others;
                let beta = log_beta.exp();
                if control_variate {
                    acc += beta * dt;
                } else {
                    x += dt + bundle.increment(p, k, i);
                    acc += beta * (-(-alpha * dt).exp_m1()) * x;
                }
                acc -= beta * u.eval(contract.wage(k)) * dt;
                log_beta -= alpha * dt;
            }
            if control_variate {
                x0 + acc - log_beta.exp() * u.eval(sol.y(i, p, steps))
            } else {
                acc + log_beta.exp() * (x - u.eval(sol.y(i, p, steps)))
            }
        })
        .collect();
    Ok(ValueReport::from_estimate(
        mean_stderr(&values),
        ValueSeeds {
            brownian: bundle.seed,
            jumps: None,
        },
    ))
}

fn check_solution(sol: &BsdeSolution, system: &SwitchingSystem) -> Result<()> {
    if sol.n_players != system.n() {
        return Err(Error::LengthMismatch {
            what: "solution players vs contracts",
            left: sol.n_players,
            right: system.n(),
        });
    }
    if !sol.grid.same_as(&system.grid) {
        return Err(Error::GridMismatch(
            "solution grid differs from the contracts' grid".into(),
        ));
    }
    Ok(())
}
