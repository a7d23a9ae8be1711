use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{EmpiricalMarginal, FlowRole, MeasureFlow, PathBundle, TimeGrid};
use crate::util::derive_seed;

/// Tag mixed into the bundle seed for the stream that samples initial values.
const Y0_STREAM_TAG: u64 = 0x5930_5f73_616d_706c;

/// Finitely supported probability measure on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteMeasure {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn dirac(x: f64) -> Self {
        DiscreteMeasure {
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() || self.atoms.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "lambda needs matching nonempty atoms/weights ({} vs {})",
                self.atoms.len(),
                self.weights.len()
            )));
        }
        if self.atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("lambda atoms must be finite".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("lambda weights must be >= 0".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("lambda weights sum to {s}, not 1")));
        }
        Ok(())
    }

    /// Atom at cumulative probability `u in [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *a;
            }
        }
        // rounding in the cumulative sum: last atom with positive weight
        self.atoms
            .iter()
            .zip(&self.weights)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .map(|(a, _)| *a)
            .unwrap_or(self.atoms[0])
    }

    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a * w)
            .sum()
    }

    /// Atoms with positive weight.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| (*a, *w))
    }
}

/// Draws `Y_0` for path `j` from `lambda`, using its own ChaCha stream.
pub fn sample_y0(lambda: &DiscreteMeasure, seed: u64, j: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[Y0_STREAM_TAG]));
    rng.set_stream(j as u64);
    lambda.quantile(rng.random::<f64>())
}

/// A principal's contract in forward form: initial value law, volatility and wage schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub lambda: DiscreteMeasure,
    /// Per-step volatility `eta_k >= 0` (the contract loads `sqrt(eta_k)` on output).
    pub eta: Vec<f64>,
    /// Per-step wage.
    pub wage: Vec<f64>,
    #[serde(default)]
    pub reference_flow: String,
}

impl ContractSpec {
    pub fn constant(lambda: DiscreteMeasure, eta: f64, wage: f64, grid: &TimeGrid) -> Self {
        ContractSpec {
            lambda,
            eta: vec![eta; grid.n_steps],
            wage: vec![wage; grid.n_steps],
            reference_flow: String::new(),
        }
    }

    /// Expands block values onto the grid; block `b` covers steps `[b N / B, (b+1) N / B)`.
    pub fn from_blocks(
        lambda: DiscreteMeasure,
        eta_blocks: &[f64],
        wage_blocks: &[f64],
        grid: &TimeGrid,
    ) -> Self {
        ContractSpec {
            lambda,
            eta: expand_blocks(eta_blocks, grid.n_steps),
            wage: expand_blocks(wage_blocks, grid.n_steps),
            reference_flow: String::new(),
        }
    }

    pub fn validate(&self, grid: &TimeGrid, eta_max: f64, reservation: f64) -> Result<()> {
        self.lambda.validate()?;
        if let Some(a) = self.lambda.support().find(|(a, _)| *a < reservation) {
            return Err(Error::Config(format!(
                "lambda atom {} below the reservation value {reservation}",
                a.0
            )));
        }
        if self.eta.len() != grid.n_steps || self.wage.len() != grid.n_steps {
            return Err(Error::Config(format!(
                "schedules must have one value per step ({}), got eta {} wage {}",
                grid.n_steps,
                self.eta.len(),
                self.wage.len()
            )));
        }
        if self.eta.iter().any(|e| !(*e >= 0.0 && *e <= eta_max)) {
            return Err(Error::Config(format!(
                "eta values must lie in [0, {eta_max}]"
            )));
        }
        if self.wage.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("wage values must be finite".into()));
        }
        Ok(())
    }
}

pub fn expand_blocks(blocks: &[f64], n_steps: usize) -> Vec<f64> {
    let b = blocks.len().max(1);
    (0..n_steps)
        .map(|k| blocks[((k * b) / n_steps).min(b - 1)])
        .collect()
}

/// Forward dynamics of a mean-field contract's value process against a fixed flow.
#[derive(Debug, Clone)]
pub struct MeanFieldContract {
    pub grid: TimeGrid,
    pub wage: Vec<f64>,
    pub sqrt_eta: Vec<f64>,
    pub marginals: Arc<Vec<EmpiricalMarginal>>,
}

impl MeanFieldContract {
    pub fn new(params: &ContractSpec, p_star: &MeasureFlow, cost: &CostSpec) -> Result<Self> {
        Self::with_marginals(params, p_star.grid, Arc::new(p_star.marginals(cost)))
    }

    pub fn with_marginals(
        params: &ContractSpec,
        grid: TimeGrid,
        marginals: Arc<Vec<EmpiricalMarginal>>,
    ) -> Result<Self> {
        if params.eta.len() != grid.n_steps || params.wage.len() != grid.n_steps {
            return Err(Error::GridMismatch(format!(
                "contract schedules have {} / {} steps, flow grid has {}",
                params.eta.len(),
                params.wage.len(),
                grid.n_steps
            )));
        }
        if marginals.len() != grid.n_points() {
            return Err(Error::GridMismatch(
                "flow marginals do not match the grid".into(),
            ));
        }
        Ok(MeanFieldContract {
            grid,
            wage: params.wage.clone(),
            sqrt_eta: params.eta.iter().map(|e| e.sqrt()).collect(),
            marginals,
        })
    }

    /// One Euler step of the value process given the output increment `dx`.
    #[inline]
    pub fn advance(&self, k: usize, y: f64, dx: f64) -> f64 {
        let dt = self.grid.dt();
        let se = self.sqrt_eta[k];
        y - (self.marginals[k].mean_conjugate(y) + self.wage[k] + se) * dt + se * dx
    }
}

/// How a player's terminal payment and regression state evolve along the outputs.
#[derive(Debug, Clone)]
pub enum PlayerContract {
    /// `xi = xi + xi_slope * X_T` with a deterministic wage; the state is the output `X`.
    Fixed {
        x0: f64,
        xi: f64,
        xi_slope: f64,
        wage: Vec<f64>,
    },
    /// The state is the forward value process, and `xi` is its terminal value.
    MeanField(Arc<MeanFieldContract>),
}

impl PlayerContract {
    pub fn fixed(xi: f64, wage: Vec<f64>) -> Self {
        PlayerContract::Fixed {
            x0: 0.0,
            xi,
            xi_slope: 0.0,
            wage,
        }
    }

    pub fn initial_state(&self, y0: f64) -> f64 {
        match self {
            PlayerContract::Fixed { x0, .. } => *x0,
            PlayerContract::MeanField(_) => y0,
        }
    }

    #[inline]
    pub fn advance(&self, k: usize, s: f64, dx: f64) -> f64 {
        match self {
            PlayerContract::Fixed { .. } => s + dx,
            PlayerContract::MeanField(c) => c.advance(k, s, dx),
        }
    }

    pub fn terminal(&self, s: f64) -> f64 {
        match self {
            PlayerContract::Fixed { xi, xi_slope, .. } => xi + xi_slope * s,
            PlayerContract::MeanField(_) => s,
        }
    }

    pub fn wage(&self, k: usize) -> f64 {
        match self {
            PlayerContract::Fixed { wage, .. } => wage[k],
            PlayerContract::MeanField(c) => c.wage[k],
        }
    }

    pub fn n_steps(&self) -> usize {
        match self {
            PlayerContract::Fixed { wage, .. } => wage.len(),
            PlayerContract::MeanField(c) => c.wage.len(),
        }
    }

    /// True when the terminal value and wage do not depend on the output path.
    pub fn is_deterministic(&self) -> bool {
        match self {
            PlayerContract::Fixed { xi_slope, .. } => *xi_slope == 0.0,
            PlayerContract::MeanField(c) => c.sqrt_eta.iter().all(|s| *s == 0.0),
        }
    }
}

/// Forward construction of mean-field contract values on a bundle.
#[derive(Debug, Clone)]
pub struct MeanFieldPaths {
    pub y0: Vec<f64>,
    pub xi: Vec<f64>,
    pub flow: MeasureFlow,
}

/// Builds the value process path by path: `X` increments are `drift dt + dW`
/// (`drift = 0` under the reference measure) and `Y_0` is drawn from `lambda`.
pub fn build_meanfield_contract(
    params: &ContractSpec,
    p_star: &MeasureFlow,
    bundle: &PathBundle,
    cost: &CostSpec,
    drift: f64,
) -> Result<MeanFieldPaths> {
    let contract = MeanFieldContract::new(params, p_star, cost)?;
    let y0: Vec<f64> = (0..bundle.n_paths)
        .map(|j| sample_y0(&params.lambda, bundle.seed, j))
        .collect();
    build_meanfield_paths(&contract, bundle, 0, &y0, drift)
}

/// As [`build_meanfield_contract`] with explicit initial values and bundle coordinate.
pub fn build_meanfield_paths(
    contract: &MeanFieldContract,
    bundle: &PathBundle,
    dim: usize,
    y0: &[f64],
    drift: f64,
) -> Result<MeanFieldPaths> {
    if !contract.grid.same_as(&bundle.grid) {
        return Err(Error::GridMismatch(format!(
            "flow grid ({}, {}) vs bundle grid ({}, {})",
            contract.grid.horizon, contract.grid.n_steps, bundle.grid.horizon, bundle.grid.n_steps
        )));
    }
    if y0.len() != bundle.n_paths {
        return Err(Error::LengthMismatch {
            what: "initial values vs bundle paths",
            left: y0.len(),
            right: bundle.n_paths,
        });
    }
    let n = bundle.grid.n_steps;
    let dt = bundle.grid.dt();
    let mut values = Vec::with_capacity(bundle.n_paths * (n + 1));
    let mut xi = Vec::with_capacity(bundle.n_paths);
    for (j, &start) in y0.iter().enumerate() {
        let mut y = start;
        values.push(y);
        for k in 0..n {
            y = contract.advance(k, y, drift * dt + bundle.increment(j, k, dim));
            values.push(y);
        }
        xi.push(y);
    }
    Ok(MeanFieldPaths {
        y0: y0.to_vec(),
        xi,
        flow: MeasureFlow::new(bundle.grid, FlowRole::MeanField, values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic_core::generate_brownian;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 50).unwrap()
    }

    #[test]
    fn flat_contract_stays_put() {
        let g = grid();
        let y0 = 1.5;
        let p =
            MeasureFlow::constant_path(g, FlowRole::MeanField, &vec![y0; g.n_points()], 1).unwrap();
        let spec = ContractSpec::constant(DiscreteMeasure::dirac(y0), 0.0, 0.0, &g);
        let b = generate_brownian(g, 10, 1, 3).unwrap();
        let out = build_meanfield_contract(&spec, &p, &b, &CostSpec::default(), 0.0).unwrap();
        assert!(out.xi.iter().all(|x| *x == y0));
        assert!(out.flow.values().iter().all(|x| *x == y0));
    }

    #[test]
    fn constant_wage_gives_linear_decay() {
        let g = grid();
        let (y0, w0) = (2.0, 0.7);
        let path: Vec<f64> = g.times().iter().map(|t| y0 - w0 * t).collect();
        let p = MeasureFlow::constant_path(g, FlowRole::MeanField, &path, 1).unwrap();
        let spec = ContractSpec::constant(DiscreteMeasure::dirac(y0), 0.0, w0, &g);
        let b = generate_brownian(g, 4, 1, 3).unwrap();
        let out = build_meanfield_contract(&spec, &p, &b, &CostSpec::default(), 0.0).unwrap();
        for x in &out.xi {
            assert!((x - (y0 - w0)).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_variance_matches_eta_t() {
        let g = grid();
        let eta = 0.3;
        let p = MeasureFlow::constant_path(g, FlowRole::MeanField, &vec![-100.0; g.n_points()], 1)
            .unwrap();
        let spec = ContractSpec::constant(DiscreteMeasure::dirac(1.0), eta, 0.0, &g);
        let b = generate_brownian(g, 100_000, 1, 11).unwrap();
        let out = build_meanfield_contract(&spec, &p, &b, &CostSpec::default(), 0.0).unwrap();
        let e = crate::util::mean_stderr(&out.xi);
        let var =
            out.xi.iter().map(|x| (x - e.mean).powi(2)).sum::<f64>() / (out.xi.len() - 1) as f64;
        // chi-square concentration: relative sd of the sample variance is sqrt(2/(M-1))
        assert!(
            (var / (eta * g.horizon) - 1.0).abs() < 5.0 * (2.0 / 1e5f64).sqrt(),
            "var {var}"
        );
    }

    #[test]
    fn y0_sampling_follows_weights() {
        let lam = DiscreteMeasure {
            atoms: vec![1.0, 2.0, 3.0],
            weights: vec![0.2, 0.0, 0.8],
        };
        lam.validate().unwrap();
        let n = 20_000;
        let hits = (0..n).filter(|&j| sample_y0(&lam, 5, j) == 3.0).count() as f64 / n as f64;
        assert!((hits - 0.8).abs() < 4.0 * (0.16f64 / n as f64).sqrt());
        assert!((0..n).all(|j| sample_y0(&lam, 5, j) != 2.0));
        assert_eq!(lam.quantile(0.999_999_999_999), 3.0);
    }

    #[test]
    fn spec_validation() {
        let g = grid();
        let spec = ContractSpec::constant(DiscreteMeasure::dirac(1.0), 0.5, 0.0, &g);
        assert!(spec.validate(&g, 1.0, 0.0).is_ok());
        assert!(spec.validate(&g, 0.4, 0.0).is_err());
        assert!(spec.validate(&g, 1.0, 2.0).is_err());
        let bad = DiscreteMeasure {
            atoms: vec![1.0, 2.0],
            weights: vec![0.5, 0.6],
        };
        assert!(bad.validate().is_err());
        assert_eq!(expand_blocks(&[1.0, 2.0], 5), vec![1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = grid();
        let p = MeasureFlow::constant_path(
            TimeGrid::new(1.0, 10).unwrap(),
            FlowRole::MeanField,
            &[0.0; 11],
            1,
        )
        .unwrap();
        let spec = ContractSpec::constant(DiscreteMeasure::dirac(1.0), 0.0, 0.0, &g);
        let b = generate_brownian(g, 4, 1, 3).unwrap();
        assert!(build_meanfield_contract(&spec, &p, &b, &CostSpec::default(), 0.0).is_err());
    }
}
