use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::policy::{IntensityPolicy, TimeVaryingRates};
use super::UtilitySpec;
use crate::agent_bsde::{sample_y0, DiscreteMeasure, PlayerContract};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{BrownianSource, TimeGrid};
use crate::util::{derive_seed, fmt_g12, mean_stderr};

/// Largest total jump probability accepted in one step.
pub const MAX_STEP_JUMP_MASS: f64 = 0.5;

const Y0_TAG: u64 = 0x7930_5f73_696d;

/// The principals' contracts, the law of each contract's initial value, and
/// the principals' utility of wages.
#[derive(Debug, Clone)]
pub struct SwitchingSystem {
    pub grid: TimeGrid,
    pub contracts: Vec<PlayerContract>,
    pub lambda: Vec<DiscreteMeasure>,
    pub utility: UtilitySpec,
    pub cost: CostSpec,
}

impl SwitchingSystem {
    /// Contracts without initial-value dependence (`Y_0 = 0` as a regression input).
    pub fn new(
        grid: TimeGrid,
        contracts: Vec<PlayerContract>,
        utility: UtilitySpec,
        cost: CostSpec,
    ) -> Result<Self> {
        let n = contracts.len();
        Self::with_lambda(
            grid,
            contracts,
            vec![DiscreteMeasure::dirac(0.0); n],
            utility,
            cost,
        )
    }

    pub fn with_lambda(
        grid: TimeGrid,
        contracts: Vec<PlayerContract>,
        lambda: Vec<DiscreteMeasure>,
        utility: UtilitySpec,
        cost: CostSpec,
    ) -> Result<Self> {
        if contracts.is_empty() {
            return Err(Error::Config("need at least one contract".into()));
        }
        if lambda.len() != contracts.len() {
            return Err(Error::LengthMismatch {
                what: "initial laws vs contracts",
                left: lambda.len(),
                right: contracts.len(),
            });
        }
        for c in &contracts {
            if c.n_steps() != grid.n_steps {
                return Err(Error::GridMismatch(format!(
                    "contract has {} steps, grid has {}",
                    c.n_steps(),
                    grid.n_steps
                )));
            }
        }
        for l in &lambda {
            l.validate()?;
        }
        Ok(SwitchingSystem {
            grid,
            contracts,
            lambda,
            utility,
            cost,
        })
    }

    pub fn n(&self) -> usize {
        self.contracts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimSetup {
    pub n_sims: usize,
    pub i0: usize,
    pub seed_brownian: u64,
    pub seed_jumps: u64,
    /// Keep the full regime and output paths of every simulation.
    pub record: bool,
}

/// A regime change: the new regime is in force from `step` on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JumpRecord {
    pub step: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchTrajectory {
    pub sim: usize,
    /// Regime in force on `[t_k, t_{k+1})`, and the final regime at index `n_steps`
    /// (empty unless recorded).
    pub regimes: Vec<usize>,
    /// Outputs laid out `[step][player]` (empty unless recorded).
    pub x: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    pub final_regime: usize,
    pub y0: Vec<f64>,
    /// Time spent in each regime.
    pub occupation: Vec<f64>,
    /// `ξ^{I_T} + ∫ (w^I - switching cost) dt`.
    pub agent_payoff: f64,
    /// Per principal, `X^i_T - U(ξ^i) 1{I_T = i} - ∫ U(w^i) 1{I = i} dt`.
    pub principal_rewards: Vec<f64>,
}

/// Simulates the regime and output processes. In each step the regime `I`
/// adds drift `dt` to its own output coordinate, then leaves with probability
/// `1 - exp(-Σ_j α^j dt)` toward `j` chosen proportionally to `α^j`. Jump
/// uniforms come from ChaCha8 stream `sim` of `seed_jumps`, two per step, so
/// that policy changes never shift the Brownian draws.
pub fn simulate_switching<P: IntensityPolicy>(
    policy: &P,
    system: &SwitchingSystem,
    setup: &SimSetup,
) -> Result<Vec<SwitchTrajectory>> {
    let n = system.n();
    if policy.n_regimes() != n {
        return Err(Error::LengthMismatch {
            what: "policy regimes vs contracts",
            left: policy.n_regimes(),
            right: n,
        });
    }
    if setup.i0 >= n {
        return Err(Error::Config(format!(
            "initial regime {} out of range 0..{n}",
            setup.i0
        )));
    }
    let source = BrownianSource::new(system.grid, n, setup.seed_brownian);
    (0..setup.n_sims)
        .into_par_iter()
        .map(|sim| simulate_one(policy, system, setup, &source, sim))
        .collect()
}

fn simulate_one<P: IntensityPolicy>(
    policy: &P,
    system: &SwitchingSystem,
    setup: &SimSetup,
    source: &BrownianSource,
    sim: usize,
) -> Result<SwitchTrajectory> {
    let n = system.n();
    let steps = system.grid.n_steps;
    let dt = system.grid.dt();
    let dw = source.path(sim);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed_jumps);
    rng.set_stream(sim as u64);

    let y0: Vec<f64> = system
        .lambda
        .iter()
        .enumerate()
        .map(|(j, l)| sample_y0(l, derive_seed(setup.seed_jumps, &[Y0_TAG, j as u64]), sim))
        .collect();
    let mut states: Vec<f64> = system
        .contracts
        .iter()
        .zip(&y0)
        .map(|(c, &v)| c.initial_state(v))
        .collect();
    let mut x: Vec<f64> = system
        .contracts
        .iter()
        .map(|c| match c {
            PlayerContract::Fixed { x0, .. } => *x0,
            PlayerContract::MeanField(_) => 0.0,
        })
        .collect();

    let mut regime = setup.i0;
    let mut regimes = Vec::new();
    let mut xs = Vec::new();
    if setup.record {
        regimes.reserve(steps + 1);
        xs.reserve((steps + 1) * n);
        xs.extend_from_slice(&x);
    }
    let mut jumps = Vec::new();
    let mut occupation = vec![0.0; n];
    let mut agent = 0.0;
    let mut rewards = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let run_scale = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let others = (n - 1) as f64;

    for k in 0..steps {
        if setup.record {
            regimes.push(regime);
        }
        policy.intensities(k, regime, &states, &y0, &mut alpha);
        alpha[regime] = 0.0;
        let total: f64 = alpha.iter().sum();
        let mass = total * dt;
        if mass > MAX_STEP_JUMP_MASS {
            return Err(Error::GridTooCoarse { step: k, mass });
        }
        let mut switching = 0.0;
        for (j, &a) in alpha.iter().enumerate() {
            if j != regime && a > 0.0 {
                switching += system
                    .cost
                    .cost(others * a)
                    .finite()
                    .unwrap_or(f64::INFINITY);
            }
        }
        let w = system.contracts[regime].wage(k);
        agent += (w - run_scale * switching) * dt;
        rewards[regime] -= system.utility.eval(w) * dt;
        occupation[regime] += dt;

        for j in 0..n {
            let d = dw[k * n + j] + if j == regime { dt } else { 0.0 };
            x[j] += d;
            states[j] = system.contracts[j].advance(k, states[j], d);
        }
        if setup.record {
            xs.extend_from_slice(&x);
        }

        let u_jump: f64 = rng.random();
        let u_target: f64 = rng.random();
        if total > 0.0 && u_jump < -(-mass).exp_m1() {
            let mut acc = 0.0;
            let mut to = regime;
            for (j, &a) in alpha.iter().enumerate() {
                if a > 0.0 {
                    to = j;
                    acc += a / total;
                    if u_target < acc {
                        break;
                    }
                }
            }
            jumps.push(JumpRecord {
                step: k + 1,
                from: regime,
                to,
            });
            regime = to;
        }
    }
    if setup.record {
        regimes.push(regime);
    }
    for (i, r) in rewards.iter_mut().enumerate() {
        *r += x[i];
        if i == regime {
            *r -= system.utility.eval(system.contracts[i].terminal(states[i]));
        }
    }
    agent += system.contracts[regime].terminal(states[regime]);
    Ok(SwitchTrajectory {
        sim,
        regimes,
        x: xs,
        jumps,
        final_regime: regime,
        y0,
        occupation,
        agent_payoff: agent,
        principal_rewards: rewards,
    })
}

impl SwitchTrajectory {
    /// Rows `sim,step,regime,X_1..X_n` with 1-based regimes; needs a recorded trajectory.
    pub fn write_csv_rows(&self, out: &mut String) {
        let n = if self.regimes.is_empty() {
            0
        } else {
            self.x.len() / self.regimes.len()
        };
        for (k, r) in self.regimes.iter().enumerate() {
            let _ = write!(out, "{},{},{}", self.sim, k, r + 1);
            for v in &self.x[k * n..(k + 1) * n] {
                let _ = write!(out, ",{}", fmt_g12(*v));
            }
            out.push('\n');
        }
    }

    pub fn csv_header(n: usize) -> String {
        let mut h = String::from("sim,step,regime");
        for i in 1..=n {
            let _ = write!(h, ",X_{i}");
        }
        h.push('\n');
        h
    }

    pub fn to_csv(trajectories: &[SwitchTrajectory]) -> String {
        let n = trajectories
            .first()
            .filter(|t| !t.regimes.is_empty())
            .map(|t| t.x.len() / t.regimes.len())
            .unwrap_or(0);
        let mut out = Self::csv_header(n);
        for t in trajectories {
            t.write_csv_rows(&mut out);
        }
        out
    }
}

/// `β_k = exp(-Σ_{m<k} α_m dt)` for `k = 0..=alpha.len()`.
pub fn survival_weights(alpha: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(alpha.len() + 1);
    let mut acc = 0.0_f64;
    out.push(1.0);
    for a in alpha {
        acc += a * dt;
        out.push((-acc).exp());
    }
    out
}

/// `β(t_from, t_to) = exp(-Σ_{from <= m < to} α_m dt)`.
pub fn survival_between(alpha: &[f64], dt: f64, from: usize, to: usize) -> f64 {
    let s: f64 = alpha[from..to].iter().sum();
    (-s * dt).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirsanovReport {
    pub mc_survival: f64,
    pub weight_formula: f64,
    pub stderr: f64,
    /// `|mc - formula| / stderr`, with the binomial stderr taken at the formula value.
    pub z_score: f64,
    pub n_sims: usize,
}

/// Fraction of simulations with no regime change in `(t, s]` under the
/// deterministic total intensity `alpha[k]`, against the survival weight.
pub fn check_girsanov(
    alpha: &[f64],
    grid: TimeGrid,
    n_sims: usize,
    seed_jumps: u64,
    t: f64,
    s: f64,
) -> Result<GirsanovReport> {
    if alpha.len() != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "intensity path has {} steps, grid has {}",
            alpha.len(),
            grid.n_steps
        )));
    }
    if !(0.0 <= t && t <= s && s <= grid.horizon) {
        return Err(Error::Config(format!(
            "need 0 <= t <= s <= T, got t={t}, s={s}"
        )));
    }
    let policy = TimeVaryingRates::uniform(2, alpha)?;
    let contracts = vec![PlayerContract::fixed(0.0, vec![0.0; grid.n_steps]); 2];
    let system = SwitchingSystem::new(grid, contracts, UtilitySpec::zero(), CostSpec::default())?;
    let setup = SimSetup {
        n_sims,
        i0: 0,
        seed_brownian: derive_seed(seed_jumps, &[0x6272]),
        seed_jumps,
        record: false,
    };
    let (kt, ks) = (grid.step_of(t), grid.step_of(s));
    let trajectories = simulate_switching(&policy, &system, &setup)?;
    let survived: Vec<f64> = trajectories
        .iter()
        .map(|tr| {
            let hit = tr.jumps.iter().any(|j| j.step > kt && j.step <= ks);
            if hit {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let est = mean_stderr(&survived);
    let formula = survival_between(alpha, grid.dt(), kt, ks);
    let se = (formula * (1.0 - formula) / n_sims as f64).sqrt();
    let z = if se > 0.0 {
        (est.mean - formula).abs() / se
    } else if est.mean == formula {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GirsanovReport {
        mc_survival: est.mean,
        weight_formula: formula,
        stderr: se,
        z_score: z,
        n_sims,
    })
}
