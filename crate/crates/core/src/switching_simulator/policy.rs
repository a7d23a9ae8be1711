use crate::agent_bsde::{optimal_intensity_from_values, BsdeSolution};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};

/// Supplies the jump intensities `α^j_k` out of the current regime.
pub trait IntensityPolicy: Sync {
    fn n_regimes(&self) -> usize;

    /// Writes `α^j` toward every regime `j` into `out` (the entry for `regime`
    /// is ignored). `states` and `y0` are the contracts' states at step `k` and
    /// their initial values on this simulation.
    fn intensities(&self, step: usize, regime: usize, states: &[f64], y0: &[f64], out: &mut [f64]);
}

/// Time-homogeneous rates `rates[from][to]`.
#[derive(Debug, Clone)]
pub struct ConstantRates {
    rates: Vec<Vec<f64>>,
}

impl ConstantRates {
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = rates.len();
        if n == 0 || rates.iter().any(|r| r.len() != n) {
            return Err(Error::Config(
                "rate matrix must be square and nonempty".into(),
            ));
        }
        if rates
            .iter()
            .flatten()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return Err(Error::Config("rates must be finite and >= 0".into()));
        }
        Ok(ConstantRates { rates })
    }

    /// No switching at all.
    pub fn zero(n: usize) -> Self {
        ConstantRates {
            rates: vec![vec![0.0; n]; n],
        }
    }
}

impl IntensityPolicy for ConstantRates {
    fn n_regimes(&self) -> usize {
        self.rates.len()
    }

    fn intensities(
        &self,
        _step: usize,
        regime: usize,
        _states: &[f64],
        _y0: &[f64],
        out: &mut [f64],
    ) {
        out.copy_from_slice(&self.rates[regime]);
    }
}

/// Deterministic rates that change per step: `rates[k][from][to]`.
#[derive(Debug, Clone)]
pub struct TimeVaryingRates {
    rates: Vec<Vec<Vec<f64>>>,
}

impl TimeVaryingRates {
    pub fn new(rates: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = rates.first().map(|r| r.len()).unwrap_or(0);
        if n == 0
            || rates
                .iter()
                .any(|m| m.len() != n || m.iter().any(|r| r.len() != n))
        {
            return Err(Error::Config(
                "every step needs a square rate matrix of the same size".into(),
            ));
        }
        if rates
            .iter()
            .flatten()
            .flatten()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return Err(Error::Config("rates must be finite and >= 0".into()));
        }
        Ok(TimeVaryingRates { rates })
    }

    /// Every regime leaves toward every other at the total rate `total[k]`, split evenly.
    pub fn uniform(n: usize, total: &[f64]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("need at least 2 regimes".into()));
        }
        let per = |a: f64| a / (n - 1) as f64;
        Self::new(
            total
                .iter()
                .map(|&a| {
                    (0..n)
                        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { per(a) }).collect())
                        .collect()
                })
                .collect(),
        )
    }

    pub fn n_steps(&self) -> usize {
        self.rates.len()
    }
}

impl IntensityPolicy for TimeVaryingRates {
    fn n_regimes(&self) -> usize {
        self.rates[0].len()
    }

    fn intensities(
        &self,
        step: usize,
        regime: usize,
        _states: &[f64],
        _y0: &[f64],
        out: &mut [f64],
    ) {
        out.copy_from_slice(&self.rates[step][regime]);
    }
}

/// The agent's optimal intensity `a*(Y^j - Y^i) / (n-1)`, with `Y` read from the
/// solution's regression surrogate at the simulated states. `scale` multiplies
/// `a*` before it is clipped to the admissible range (1 is the optimum).
#[derive(Debug, Clone)]
pub struct OptimalPolicy<'a> {
    pub sol: &'a BsdeSolution,
    pub cost: CostSpec,
    pub scale: f64,
}

impl<'a> OptimalPolicy<'a> {
    pub fn new(sol: &'a BsdeSolution, cost: CostSpec) -> Self {
        OptimalPolicy {
            sol,
            cost,
            scale: 1.0,
        }
    }

    pub fn scaled(sol: &'a BsdeSolution, cost: CostSpec, scale: f64) -> Self {
        OptimalPolicy { sol, cost, scale }
    }
}

impl IntensityPolicy for OptimalPolicy<'_> {
    fn n_regimes(&self) -> usize {
        self.sol.n_players
    }

    fn intensities(&self, step: usize, regime: usize, states: &[f64], y0: &[f64], out: &mut [f64]) {
        let n = self.sol.n_players;
        let mut small = [0.0; 32];
        let mut large = Vec::new();
        let y = if n <= small.len() {
            &mut small[..n]
        } else {
            large.resize(n, 0.0);
            &mut large[..]
        };
        for (j, v) in y.iter_mut().enumerate() {
            *v = self.sol.y_hat(j, step, states, y0[j]);
        }
        optimal_intensity_from_values(y, regime, &self.cost, out);
        if self.scale != 1.0 {
            let cap = self.cost.a_max / (n - 1) as f64;
            for a in out.iter_mut() {
                *a = (*a * self.scale).clamp(0.0, cap);
            }
        }
    }
}
