use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::principal_objective;
use super::search::{best_response, GridParams};
use super::MfgConfig;
use crate::agent_bsde::{build_meanfield_contract, ContractSpec};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{
    generate_brownian, w2_marginal_sup, FlowRole, MeasureFlow, PathBundle, TimeGrid,
};
use crate::switching_simulator::UtilitySpec;
use crate::util::{derive_seed, round_g12};

const OBJECTIVE_TAG: u64 = 1;
const FLOW_TAG: u64 = 2;
const MIX_TAG: u64 = 3;

/// Number of consecutive iterations without a new lowest residual that halves the damping.
const STALL_ITERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSeeds {
    pub master: u64,
    pub objective_paths: u64,
    pub flow_paths: u64,
}

impl EquilibriumSeeds {
    pub fn from_master(master: u64) -> Self {
        EquilibriumSeeds {
            master,
            objective_paths: derive_seed(master, &[OBJECTIVE_TAG]),
            flow_paths: derive_seed(master, &[FLOW_TAG]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub params: GridParams,
    pub contract: ContractSpec,
    /// The flow `p*` reached by the iteration.
    pub flow: MeasureFlow,
    pub value: f64,
    pub value_stderr: f64,
    /// `max_k W2(p_k, q_k)` per iteration, where `q` is the flow induced by the best response.
    pub residual_history: Vec<f64>,
    pub damping_history: Vec<f64>,
    pub converged: bool,
    pub seeds: EquilibriumSeeds,
    pub config: MfgConfig,
    pub grid: TimeGrid,
}

/// Flow of `Ȳ` under `spec` against `p`, with the output carrying drift 1.
pub(crate) fn induced_flow(
    spec: &ContractSpec,
    p: &MeasureFlow,
    bundle: &PathBundle,
    cost: &CostSpec,
) -> Result<MeasureFlow> {
    Ok(build_meanfield_contract(spec, p, bundle, cost, 1.0)?
        .flow
        .with_role(FlowRole::MeanField))
}

fn mix(p: &MeasureFlow, q: &MeasureFlow, theta: f64, seed: u64) -> Result<MeasureFlow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = p.n_points();
    let mut values = Vec::with_capacity(p.values().len());
    for s in 0..p.n_samples() {
        let take_q = rng.random::<f64>() < theta;
        values.extend_from_slice(if take_q { q.path(s) } else { p.path(s) });
        debug_assert_eq!(values.len(), (s + 1) * width);
    }
    MeasureFlow::new(p.grid, FlowRole::MeanField, values)
}

struct Bundles {
    objective: PathBundle,
    flow: PathBundle,
}

fn bundles(config: &MfgConfig, grid: TimeGrid, seeds: &EquilibriumSeeds) -> Result<Bundles> {
    Ok(Bundles {
        objective: generate_brownian(grid, config.mc_paths, 1, seeds.objective_paths)?,
        flow: generate_brownian(grid, config.flow_samples, 1, seeds.flow_paths)?,
    })
}

/// Damped best-response iteration on the flow. Starts from the flow induced
/// by the mid-grid contract against a constant flow at the middle atom; each
/// iteration replaces every sample of `p` by the induced sample with
/// probability `θ`. The damping halves (down to `min_damping`) after
/// [`STALL_ITERS`] iterations without a new lowest residual.
pub fn fixed_point(
    config: &MfgConfig,
    grid: TimeGrid,
    cost: &CostSpec,
    utility: &UtilitySpec,
    seed: u64,
) -> Result<EquilibriumResult> {
    config.validate()?;
    grid.validate()?;
    cost.validate()?;
    utility.validate()?;
    let seeds = EquilibriumSeeds::from_master(seed);
    let b = bundles(config, grid, &seeds)?;
    let mut params = GridParams::midpoint(config);
    let mid = config.atoms()[config.n_atoms / 2];
    let p_init = MeasureFlow::constant_path(
        grid,
        FlowRole::MeanField,
        &vec![mid; grid.n_points()],
        config.flow_samples,
    )?;
    let mut p = induced_flow(&params.to_spec(config, &grid), &p_init, &b.flow, cost)?;

    let mut residuals = Vec::new();
    let mut dampings = Vec::new();
    let mut theta = config.damping;
    let mut best_residual = f64::INFINITY;
    let mut since_best = 0;
    let mut converged = false;
    let mut value = None;
    for it in 0..config.max_fp_iters {
        let br = best_response(&p, config, &b.objective, cost, utility, Some(&params))?;
        params = br.params.clone();
        value = Some((br.j, br.stderr));
        let q = induced_flow(&br.spec, &p, &b.flow, cost)?;
        let r = w2_marginal_sup(&p, &q)?;
        residuals.push(r);
        dampings.push(theta);
        log::debug!(
            "fixed point iteration {it}: residual {r:.3e}, J {:.6}, damping {theta}",
            br.j
        );
        if r <= config.tol_fp {
            converged = true;
            break;
        }
        if r < best_residual {
            best_residual = r;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_ITERS {
                theta = (theta / 2.0).max(config.min_damping);
                since_best = 0;
            }
        }
        p = mix(&p, &q, theta, derive_seed(seed, &[MIX_TAG, it as u64]))?;
    }
    let (value, value_stderr) = match value {
        Some(v) if converged => v,
        _ => {
            let e = principal_objective(
                &params.to_spec(config, &grid),
                &p,
                &b.objective,
                cost,
                utility,
            )?;
            (e.j, e.stderr)
        }
    };
    Ok(EquilibriumResult {
        contract: params.to_spec(config, &grid),
        params,
        flow: p,
        value,
        value_stderr,
        residual_history: residuals,
        damping_history: dampings,
        converged,
        seeds,
        config: config.clone(),
        grid,
    })
}

/// Post-hoc fixed-point defect: the best response at the returned flow,
/// searched again from the returned contract and from the mid-grid start
/// (the better of the two), compared with the returned contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectReport {
    pub j_returned: f64,
    pub j_rerun: f64,
    pub stderr: f64,
    /// `|j_rerun - j_returned| / stderr` (0 when both are exact and equal).
    pub j_change_stderrs: f64,
    pub residual_returned: f64,
    pub residual_rerun: f64,
}

pub fn equilibrium_defect(
    eq: &EquilibriumResult,
    cost: &CostSpec,
    utility: &UtilitySpec,
) -> Result<DefectReport> {
    let b = bundles(&eq.config, eq.grid, &eq.seeds)?;
    let returned = principal_objective(&eq.contract, &eq.flow, &b.objective, cost, utility)?;
    let warm = best_response(
        &eq.flow,
        &eq.config,
        &b.objective,
        cost,
        utility,
        Some(&eq.params),
    )?;
    let cold = best_response(&eq.flow, &eq.config, &b.objective, cost, utility, None)?;
    let br = if cold.j > warm.j { cold } else { warm };
    let q_ret = induced_flow(&eq.contract, &eq.flow, &b.flow, cost)?;
    let q_new = induced_flow(&br.spec, &eq.flow, &b.flow, cost)?;
    let se = returned.stderr.max(br.stderr);
    let d = (br.j - returned.j).abs();
    let z = if se > 0.0 {
        d / se
    } else if d <= 1e-12 * returned.j.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DefectReport {
        j_returned: returned.j,
        j_rerun: br.j,
        stderr: se,
        j_change_stderrs: z,
        residual_returned: w2_marginal_sup(&eq.flow, &q_ret)?,
        residual_rerun: w2_marginal_sup(&eq.flow, &q_new)?,
    })
}

/// On-disk form of an equilibrium; the flow lives in a CSV next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EquilibriumFile {
    params: GridParams,
    contract: ContractSpec,
    eta_blocks: Vec<f64>,
    wage_blocks: Vec<f64>,
    value: f64,
    value_stderr: f64,
    residual_history: Vec<f64>,
    damping_history: Vec<f64>,
    converged: bool,
    iterations: usize,
    seeds: EquilibriumSeeds,
    config: MfgConfig,
    grid: TimeGrid,
    flow_file: String,
    flow_samples: usize,
}

pub const EQUILIBRIUM_JSON: &str = "equilibrium.json";
pub const EQUILIBRIUM_FLOW_CSV: &str = "equilibrium_flow.csv";

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| round_g12(*x)).collect()
}

impl EquilibriumResult {
    pub fn iterations(&self) -> usize {
        self.residual_history.len()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }

    /// JSON document (keys sorted, floats at 12 significant digits).
    pub fn to_json(&self) -> Result<String> {
        let mut contract = self.contract.clone();
        contract.eta = rounded(&contract.eta);
        contract.wage = rounded(&contract.wage);
        contract.lambda.atoms = rounded(&contract.lambda.atoms);
        contract.lambda.weights = rounded(&contract.lambda.weights);
        let file = EquilibriumFile {
            params: self.params.clone(),
            contract,
            eta_blocks: rounded(&self.params.eta_blocks(&self.config)),
            wage_blocks: rounded(&self.params.wage_blocks(&self.config)),
            value: round_g12(self.value),
            value_stderr: round_g12(self.value_stderr),
            residual_history: rounded(&self.residual_history),
            damping_history: rounded(&self.damping_history),
            converged: self.converged,
            iterations: self.iterations(),
            seeds: self.seeds,
            config: self.config.clone(),
            grid: self.grid,
            flow_file: EQUILIBRIUM_FLOW_CSV.into(),
            flow_samples: self.flow.n_samples(),
        };
        let v = serde_json::to_value(&file)?;
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }

    /// Writes the JSON document and the flow CSV into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(EQUILIBRIUM_JSON);
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(EQUILIBRIUM_FLOW_CSV);
        self.flow.write_csv(&csv)?;
        Ok(vec![json, csv])
    }

    /// Reads an equilibrium written by [`EquilibriumResult::write`].
    pub fn read(json_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let f: EquilibriumFile = serde_json::from_str(&text)?;
        f.config.validate()?;
        f.grid.validate()?;
        f.params.validate(&f.config)?;
        let dir = json_path.parent().unwrap_or(Path::new("."));
        let flow = MeasureFlow::read_csv(&dir.join(&f.flow_file), f.grid, FlowRole::MeanField)?;
        if flow.n_samples() != f.flow_samples {
            return Err(Error::Config(format!(
                "flow file has {} samples, equilibrium records {}",
                flow.n_samples(),
                f.flow_samples
            )));
        }
        Ok(EquilibriumResult {
            contract: f.params.to_spec(&f.config, &f.grid),
            params: f.params,
            flow,
            value: f.value,
            value_stderr: f.value_stderr,
            residual_history: f.residual_history,
            damping_history: f.damping_history,
            converged: f.converged,
            seeds: f.seeds,
            config: f.config,
            grid: f.grid,
        })
    }
}
