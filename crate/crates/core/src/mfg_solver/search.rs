use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{atom_objective, combine, AtomObjective, ObjectiveEstimate};
use super::MfgConfig;
use crate::agent_bsde::{ContractSpec, DiscreteMeasure, MeanFieldContract};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{EmpiricalMarginal, MeasureFlow, PathBundle, TimeGrid};
use crate::switching_simulator::UtilitySpec;

/// A point of the search grid: `λ` weights in units of `1 / lambda_resolution`,
/// and per-block indices into the volatility and wage grids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub lambda_units: Vec<usize>,
    pub eta_idx: Vec<usize>,
    pub wage_idx: Vec<usize>,
}

impl GridParams {
    /// All mass on the middle atom, middle volatility and middle wage in every block.
    pub fn midpoint(config: &MfgConfig) -> Self {
        let mut lambda_units = vec![0; config.n_atoms];
        lambda_units[config.n_atoms / 2] = config.lambda_resolution;
        GridParams {
            lambda_units,
            eta_idx: vec![config.n_eta / 2; config.n_time_blocks],
            wage_idx: vec![config.n_wage / 2; config.n_time_blocks],
        }
    }

    pub fn validate(&self, config: &MfgConfig) -> Result<()> {
        let ok = self.lambda_units.len() == config.n_atoms
            && self.lambda_units.iter().sum::<usize>() == config.lambda_resolution
            && self.eta_idx.len() == config.n_time_blocks
            && self.wage_idx.len() == config.n_time_blocks
            && self.eta_idx.iter().all(|i| *i < config.n_eta)
            && self.wage_idx.iter().all(|i| *i < config.n_wage);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "grid parameters do not fit the mfg grids".into(),
            ))
        }
    }

    pub fn lambda(&self, config: &MfgConfig) -> DiscreteMeasure {
        let q = config.lambda_resolution as f64;
        DiscreteMeasure {
            atoms: config.atoms(),
            weights: self.lambda_units.iter().map(|u| *u as f64 / q).collect(),
        }
    }

    pub fn eta_blocks(&self, config: &MfgConfig) -> Vec<f64> {
        let g = config.eta_grid();
        self.eta_idx.iter().map(|i| g[*i]).collect()
    }

    pub fn wage_blocks(&self, config: &MfgConfig) -> Vec<f64> {
        let g = config.wage_grid();
        self.wage_idx.iter().map(|i| g[*i]).collect()
    }

    pub fn to_spec(&self, config: &MfgConfig, grid: &TimeGrid) -> ContractSpec {
        ContractSpec::from_blocks(
            self.lambda(config),
            &self.eta_blocks(config),
            &self.wage_blocks(config),
            grid,
        )
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub params: GridParams,
    pub spec: ContractSpec,
    pub j: f64,
    pub stderr: f64,
    pub sweeps: usize,
    pub evaluations: usize,
}

struct Evaluator<'a> {
    config: &'a MfgConfig,
    grid: TimeGrid,
    marginals: Arc<Vec<EmpiricalMarginal>>,
    bundle: &'a PathBundle,
    utility: UtilitySpec,
    atoms: Vec<f64>,
}

impl Evaluator<'_> {
    fn contract(&self, params: &GridParams) -> Result<MeanFieldContract> {
        MeanFieldContract::with_marginals(
            &params.to_spec(self.config, &self.grid),
            self.grid,
            self.marginals.clone(),
        )
    }

    /// Objective values of the atoms listed in `which`.
    fn atoms_for(&self, params: &GridParams, which: &[usize]) -> Result<Vec<AtomObjective>> {
        let c = self.contract(params)?;
        Ok(which
            .iter()
            .map(|&a| atom_objective(&c, self.atoms[a], self.bundle, &self.utility))
            .collect())
    }

    fn estimate(&self, params: &GridParams) -> Result<ObjectiveEstimate> {
        let which: Vec<usize> = (0..self.atoms.len())
            .filter(|&a| params.lambda_units[a] > 0)
            .collect();
        let vals = self.atoms_for(params, &which)?;
        let q = self.config.lambda_resolution as f64;
        let pairs: Vec<(f64, &AtomObjective)> = which
            .iter()
            .zip(&vals)
            .map(|(&a, v)| (params.lambda_units[a] as f64 / q, v))
            .collect();
        Ok(combine(&pairs))
    }
}

/// Coordinate ascent over the block volatilities, block wages and `λ`
/// weights, with every candidate evaluated on the same paths. Stops when a
/// full sweep improves the objective by less than one standard error.
pub fn best_response(
    p: &MeasureFlow,
    config: &MfgConfig,
    bundle: &PathBundle,
    cost: &CostSpec,
    utility: &UtilitySpec,
    start: Option<&GridParams>,
) -> Result<BestResponse> {
    config.validate()?;
    if !p.grid.same_as(&bundle.grid) {
        return Err(Error::GridMismatch("flow and bundle grids differ".into()));
    }
    let ev = Evaluator {
        config,
        grid: p.grid,
        marginals: Arc::new(p.marginals(cost)),
        bundle,
        utility: *utility,
        atoms: config.atoms(),
    };
    let mut cur = match start {
        Some(s) => {
            s.validate(config)?;
            s.clone()
        }
        None => GridParams::midpoint(config),
    };
    let mut best = ev.estimate(&cur)?;
    let mut evaluations = 1;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let sweep_start = best.j;
        for kind in 0..2 {
            let n_values = if kind == 0 {
                config.n_eta
            } else {
                config.n_wage
            };
            for b in 0..config.n_time_blocks {
                let current = if kind == 0 {
                    cur.eta_idx[b]
                } else {
                    cur.wage_idx[b]
                };
                let cands: Vec<(usize, GridParams)> = (0..n_values)
                    .filter(|v| *v != current)
                    .map(|v| {
                        let mut c = cur.clone();
                        if kind == 0 {
                            c.eta_idx[b] = v;
                        } else {
                            c.wage_idx[b] = v;
                        }
                        (v, c)
                    })
                    .collect();
                let scored: Vec<ObjectiveEstimate> = cands
                    .par_iter()
                    .map(|(_, c)| ev.estimate(c))
                    .collect::<Result<_>>()?;
                evaluations += scored.len();
                for ((_, c), s) in cands.into_iter().zip(scored) {
                    if s.j > best.j {
                        best = s;
                        cur = c;
                    }
                }
            }
        }
        // λ: the objective is linear in the weights, so move mass unit by
        // unit from the worst supported atom to the best atom.
        let all: Vec<usize> = (0..ev.atoms.len()).collect();
        let per_atom: Vec<f64> = ev.atoms_for(&cur, &all)?.iter().map(|a| a.mean()).collect();
        evaluations += 1;
        loop {
            let donor = (0..per_atom.len())
                .filter(|&a| cur.lambda_units[a] > 0)
                .min_by(|&a, &b| per_atom[a].total_cmp(&per_atom[b]).then(b.cmp(&a)));
            let receiver = (0..per_atom.len())
                .max_by(|&a, &b| per_atom[a].total_cmp(&per_atom[b]).then(b.cmp(&a)));
            match (donor, receiver) {
                (Some(d), Some(r)) if per_atom[r] > per_atom[d] => {
                    cur.lambda_units[d] -= 1;
                    cur.lambda_units[r] += 1;
                }
                _ => break,
            }
        }
        best = ev.estimate(&cur)?;
        evaluations += 1;
        let gain = best.j - sweep_start;
        if gain < best.stderr || gain <= 1e-12 * best.j.abs().max(1.0) {
            break;
        }
    }
    let spec = cur.to_spec(config, &p.grid);
    Ok(BestResponse {
        params: cur,
        spec,
        j: best.j,
        stderr: best.stderr,
        sweeps,
        evaluations,
    })
}
