use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use super::SweepConfig;
use crate::agent_bsde::{
    build_meanfield_contract, sample_y0, solve_nplayer, BsdeSolution, DiscreteMeasure,
    MeanFieldContract, NPlayerProblem, PlayerContract, RegressionConfig, SolveOptions,
};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::mfg_solver::EquilibriumResult;
use crate::stochastic_core::{
    generate_brownian, w2_path_coupled, w2_path_exact_capped, w2_path_exact_sq_all, DistanceKind,
    FlowRole, MeasureFlow, PathBundle, TimeGrid,
};
use crate::util::{derive_seed, mean_stderr, median, spearman};

const PATHS_TAG: u64 = 1;
const Y0_TAG: u64 = 2;
const SUBSAMPLE_TAG: u64 = 3;
const FLOOR_TAG: u64 = 4;
const REFERENCE_TAG: u64 = 5;
pub(super) const VALUE_TAG: u64 = 6;

/// Below this both sides of a ratio count as zero.
const ZERO: f64 = 1e-24;

/// A stability ratio; `Degenerate` when numerator and denominator both vanish,
/// `Unavailable` when the exact distance was not computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    Degenerate,
    Unavailable,
}

impl Ratio {
    fn new(num: f64, den: f64, rhs: f64) -> Self {
        if num <= ZERO && rhs <= ZERO {
            Ratio::Degenerate
        } else {
            Ratio::Value(num / den)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(*v),
            _ => None,
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Value(v) => s.serialize_f64(*v),
            Ratio::Degenerate => s.serialize_str("degenerate"),
            Ratio::Unavailable => s.serialize_none(),
        }
    }
}

/// Statistics of one replication at one `n`.
#[derive(Debug, Clone, Serialize)]
pub struct RepStats {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimator: DistanceKind,
    /// `d_0^2(pⁿ, p*)` averaged over the evaluation paths.
    pub d2: f64,
    /// Index-coupled bound on the same distance.
    pub d2_coupled: f64,
    /// `d_0^2(νⁿ, p*)` for the i.i.d. copies on the same paths.
    pub d2_copies: f64,
    /// `E sup_t |Y^{n,i} - Ȳ^i|^2` over players and paths.
    pub sup_dy2: f64,
    /// `E ∫ |Z^{n,i} - Z̄^i|^2 dt` over players and paths.
    pub int_dz2: f64,
    /// `E ∫ d_u^2(pⁿ, p*) du` (trapezoid), exact distances only.
    pub rhs: Option<f64>,
    pub ratio_y: Ratio,
    pub ratio_z: Ratio,
    pub picard_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosRow {
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    pub estimator: DistanceKind,
    pub mean_d2: f64,
    pub stderr_d2: f64,
    pub mean_d2_coupled: f64,
    pub mean_d2_copies: f64,
    pub stderr_d2_copies: f64,
    /// Mean half-vs-half distance between two `n`-samples of the reference.
    pub floor: f64,
    pub floor_stderr: f64,
    pub mean_sup_dy2: f64,
    pub mean_int_dz2: f64,
    pub mean_rhs: Option<f64>,
    pub median_ratio_y: Option<f64>,
    pub max_ratio_y: Option<f64>,
    pub median_ratio_z: Option<f64>,
    pub max_ratio_z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// Spearman correlation between `n` and `mean_d2`.
    pub spearman: f64,
    pub reference_size: usize,
    pub paths_per_rep: usize,
    pub eval_paths: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    pub config_hash: Option<String>,
    /// Every successful replication, in `(n, rep)` order.
    pub cells: Vec<RepStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub n: usize,
    pub reps: Vec<RepStats>,
    pub failed: usize,
    pub median_ratio_y: Option<f64>,
    pub max_ratio_y: Option<f64>,
    pub median_ratio_z: Option<f64>,
    pub max_ratio_z: Option<f64>,
    /// `max / median` of the ratios over replications (`None` if degenerate).
    pub spread_y: Option<f64>,
    pub spread_z: Option<f64>,
    pub all_finite: bool,
    pub degenerate: bool,
    pub seed: u64,
    pub config_hash: Option<String>,
}

/// The equilibrium contract and a large sample of its value process, shared by all replications.
pub(super) struct Context {
    pub grid: TimeGrid,
    pub cost: CostSpec,
    pub reg: RegressionConfig,
    pub contract: Arc<MeanFieldContract>,
    pub lambda: DiscreteMeasure,
    pub reference: MeasureFlow,
}

impl Context {
    pub fn new(
        eq: &EquilibriumResult,
        cost: &CostSpec,
        reg: &RegressionConfig,
        reference_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let grid = eq.grid;
        let contract = Arc::new(MeanFieldContract::new(&eq.contract, &eq.flow, cost)?);
        let bundle =
            generate_brownian(grid, reference_size, 1, derive_seed(seed, &[REFERENCE_TAG]))?;
        let reference = build_meanfield_contract(&eq.contract, &eq.flow, &bundle, cost, 1.0)?
            .flow
            .with_role(FlowRole::MeanField);
        Ok(Context {
            grid,
            cost: *cost,
            reg: *reg,
            contract,
            lambda: eq.contract.lambda.clone(),
            reference,
        })
    }

    /// The n-player system of copies of the equilibrium contract on fresh
    /// paths, each output carrying drift `drift[i]`.
    pub fn solve(
        &self,
        n: usize,
        paths: usize,
        seed: u64,
        drift: Vec<f64>,
        full_z: bool,
    ) -> Result<(BsdeSolution, PathBundle)> {
        let bundle = generate_brownian(self.grid, paths, n, derive_seed(seed, &[PATHS_TAG]))?;
        let y0: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let s = derive_seed(seed, &[Y0_TAG, i as u64]);
                (0..paths).map(|p| sample_y0(&self.lambda, s, p)).collect()
            })
            .collect();
        let problem = NPlayerProblem {
            contracts: vec![PlayerContract::MeanField(self.contract.clone()); n],
            y0,
            drift,
        };
        let sol = solve_nplayer(
            &problem,
            &bundle,
            &self.cost,
            &self.reg,
            SolveOptions { full_z },
        )?;
        if !sol.converged {
            return Err(Error::Experiment(sol.warnings.join("; ")));
        }
        Ok((sol, bundle))
    }

    /// `n` distinct reference samples.
    fn subsample(&self, n: usize, seed: u64, from: usize, len: usize) -> Result<MeasureFlow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, len, n)
            .into_iter()
            .map(|i| from + i)
            .collect();
        self.reference.select(&idx)
    }
}

fn sq_distance(a: &MeasureFlow, b: &MeasureFlow, cap: usize) -> Result<(f64, DistanceKind)> {
    if a.n_samples() <= cap {
        Ok((
            w2_path_exact_capped(a, b, 0, cap)?.powi(2),
            DistanceKind::Exact,
        ))
    } else {
        Ok((w2_path_coupled(a, b, 0)?.powi(2), DistanceKind::Coupled))
    }
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

fn replication(
    ctx: &Context,
    cfg: &SweepConfig,
    n: usize,
    rep: usize,
    master: u64,
) -> Result<RepStats> {
    let seed = derive_seed(master, &[n as u64, rep as u64]);
    let (sol, _) = ctx.solve(n, cfg.paths_per_rep, seed, vec![1.0; n], true)?;
    let grid = ctx.grid;
    let steps = grid.n_steps;
    let dt = grid.dt();
    let m = sol.n_paths;

    let mut sup_dy2 = 0.0;
    let mut int_dz2 = 0.0;
    for i in 0..n {
        for p in 0..m {
            let mut s = 0.0_f64;
            for k in 0..=steps {
                s = s.max((sol.y(i, p, k) - sol.state(i, p, k)).powi(2));
            }
            sup_dy2 += s;
            let mut acc = 0.0;
            for k in 0..steps {
                for d in 0..n {
                    let own = if d == i {
                        ctx.contract.sqrt_eta[k]
                    } else {
                        0.0
                    };
                    let z = sol.z(i, p, k, d).unwrap_or(0.0);
                    acc += (z - own).powi(2);
                }
            }
            int_dz2 += acc * dt;
        }
    }
    sup_dy2 /= (n * m) as f64;
    int_dz2 /= (n * m) as f64;

    let exact = n <= cfg.assignment_cap;
    let mut d2 = 0.0;
    let mut d2_coupled = 0.0;
    let mut d2_copies = 0.0;
    let mut rhs = 0.0;
    for e in 0..cfg.eval_paths {
        let pn = sol.empirical_flow(e)?;
        let mut copies = Vec::with_capacity(n * (steps + 1));
        for i in 0..n {
            copies.extend((0..=steps).map(|k| sol.state(i, e, k)));
        }
        let copies = MeasureFlow::new(grid, FlowRole::IidCopies, copies)?;
        let rn = ctx.subsample(
            n,
            derive_seed(seed, &[SUBSAMPLE_TAG, e as u64]),
            0,
            ctx.reference.n_samples(),
        )?;
        if exact {
            let sq = w2_path_exact_sq_all(&pn, &rn, cfg.assignment_cap)?;
            d2 += sq[0];
            rhs += trapezoid(&sq, dt);
        } else {
            d2 += w2_path_coupled(&pn, &rn, 0)?.powi(2);
        }
        d2_coupled += w2_path_coupled(&pn, &rn, 0)?.powi(2);
        d2_copies += sq_distance(&copies, &rn, cfg.assignment_cap)?.0;
    }
    let e = cfg.eval_paths as f64;
    let rhs = exact.then_some(rhs / e);
    let (ratio_y, ratio_z) = match rhs {
        Some(r) => (
            Ratio::new(sup_dy2, r, r),
            Ratio::new(int_dz2, r + 1.0 / (n * n) as f64, r),
        ),
        None => (Ratio::Unavailable, Ratio::Unavailable),
    };
    Ok(RepStats {
        n,
        rep,
        seed,
        estimator: if exact {
            DistanceKind::Exact
        } else {
            DistanceKind::Coupled
        },
        d2: d2 / e,
        d2_coupled: d2_coupled / e,
        d2_copies: d2_copies / e,
        sup_dy2,
        int_dz2,
        rhs,
        ratio_y,
        ratio_z,
        picard_iterations: sol.picard_residuals.len(),
    })
}

/// Runs every `(n, rep)` cell; failures are kept as errors in cell order.
fn run_cells(ctx: &Context, cfg: &SweepConfig, ns: &[usize], master: u64) -> Vec<Result<RepStats>> {
    let cells: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    cells
        .into_par_iter()
        .map(|(n, r)| replication(ctx, cfg, n, r, master))
        .collect()
}

pub(super) fn split<T>(
    cfg: &SweepConfig,
    n: usize,
    cells: impl IntoIterator<Item = Result<T>>,
) -> Result<(Vec<T>, usize)> {
    let mut ok = Vec::new();
    let mut failed = 0;
    let mut last_err = None;
    for r in cells {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => {
                log::warn!("replication failed at n = {n}: {e}");
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    let total = ok.len() + failed;
    if ok.is_empty() || failed as f64 > cfg.max_fail_fraction * total as f64 {
        return Err(Error::Experiment(format!(
            "{failed} of {total} replications failed at n = {n}; last error: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )));
    }
    Ok((ok, failed))
}

fn ratio_stats(reps: &[RepStats], pick: impl Fn(&RepStats) -> Ratio) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = reps.iter().filter_map(|r| pick(r).value()).collect();
    if v.is_empty() {
        return (None, None);
    }
    (
        Some(median(&v)),
        Some(v.iter().copied().fold(f64::MIN, f64::max)),
    )
}

/// Mean exact (or coupled, above the cap) distance between two disjoint
/// `n`-samples of the reference, one from each half.
fn floor(ctx: &Context, cfg: &SweepConfig, n: usize, master: u64) -> Result<(f64, f64)> {
    let half = ctx.reference.n_samples() / 2;
    let d: Vec<f64> = (0..cfg.floor_draws)
        .into_par_iter()
        .map(|f| {
            let s = derive_seed(master, &[FLOOR_TAG, n as u64, f as u64]);
            let a = ctx.subsample(n, derive_seed(s, &[0]), 0, half)?;
            let b = ctx.subsample(n, derive_seed(s, &[1]), half, half)?;
            Ok(sq_distance(&a, &b, cfg.assignment_cap)?.0)
        })
        .collect::<Result<_>>()?;
    let e = mean_stderr(&d);
    Ok((e.mean, e.stderr))
}

/// For each `n`: `reps` systems of `n` copies of the equilibrium contract
/// solved on fresh paths, with the players' empirical law compared against
/// a reference sample of the mean-field law.
pub fn chaos_sweep(
    eq: &EquilibriumResult,
    cfg: &SweepConfig,
    cost: &CostSpec,
    reg: &RegressionConfig,
    seed: u64,
) -> Result<ChaosReport> {
    cfg.validate()?;
    let ctx = Context::new(eq, cost, reg, cfg.reference_size, seed)?;
    let mut cells = run_cells(&ctx, cfg, &cfg.n_list, seed).into_iter();
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    let mut kept = Vec::new();
    for &n in &cfg.n_list {
        let (reps, failed) = split(cfg, n, cells.by_ref().take(cfg.reps))?;
        let d2 = mean_stderr(&reps.iter().map(|r| r.d2).collect::<Vec<_>>());
        let copies = mean_stderr(&reps.iter().map(|r| r.d2_copies).collect::<Vec<_>>());
        let avg = |f: fn(&RepStats) -> f64| reps.iter().map(f).sum::<f64>() / reps.len() as f64;
        let rhs: Vec<f64> = reps.iter().filter_map(|r| r.rhs).collect();
        let (median_ratio_y, max_ratio_y) = ratio_stats(&reps, |r| r.ratio_y);
        let (median_ratio_z, max_ratio_z) = ratio_stats(&reps, |r| r.ratio_z);
        let (fl, fl_se) = floor(&ctx, cfg, n, seed)?;
        rows.push(ChaosRow {
            n,
            replications: reps.len(),
            failed,
            estimator: reps[0].estimator,
            mean_d2: d2.mean,
            stderr_d2: d2.stderr,
            mean_d2_coupled: avg(|r| r.d2_coupled),
            mean_d2_copies: copies.mean,
            stderr_d2_copies: copies.stderr,
            floor: fl,
            floor_stderr: fl_se,
            mean_sup_dy2: avg(|r| r.sup_dy2),
            mean_int_dz2: avg(|r| r.int_dz2),
            mean_rhs: (!rhs.is_empty()).then(|| rhs.iter().sum::<f64>() / rhs.len() as f64),
            median_ratio_y,
            max_ratio_y,
            median_ratio_z,
            max_ratio_z,
        });
        kept.extend(reps);
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.mean_d2).collect();
    Ok(ChaosReport {
        spearman: if rows.len() > 1 {
            spearman(&ns, &ds)
        } else {
            f64::NAN
        },
        rows,
        reference_size: ctx.reference.n_samples(),
        paths_per_rep: cfg.paths_per_rep,
        eval_paths: cfg.eval_paths,
        grid: ctx.grid,
        seed,
        config_hash: None,
        cells: kept,
    })
}

/// Ratios `sup|ΔY|^2 / ∫d_u^2` and `∫|ΔZ|^2 / (∫d_u^2 + 1/n^2)` per replication
/// at a single `n`; cells coincide with those of [`chaos_sweep`] for the same seed.
pub fn lemma_estimates_check(
    n: usize,
    eq: &EquilibriumResult,
    cfg: &SweepConfig,
    cost: &CostSpec,
    reg: &RegressionConfig,
    seed: u64,
) -> Result<LemmaReport> {
    if n > cfg.assignment_cap {
        return Err(Error::Config(format!(
            "the stability check needs exact distances: n = {n} exceeds the cap {}",
            cfg.assignment_cap
        )));
    }
    let cfg = SweepConfig {
        n_list: vec![n],
        ..cfg.clone()
    };
    cfg.validate()?;
    let ctx = Context::new(eq, cost, reg, cfg.reference_size, seed)?;
    let (reps, failed) = split(&cfg, n, run_cells(&ctx, &cfg, &[n], seed))?;
    Ok(LemmaReport::from_reps(n, reps, failed, seed))
}

impl LemmaReport {
    /// Summary of the replications at one `n`, e.g. the cells of a [`ChaosReport`].
    pub fn from_reps(n: usize, reps: Vec<RepStats>, failed: usize, seed: u64) -> Self {
        let (median_ratio_y, max_ratio_y) = ratio_stats(&reps, |r| r.ratio_y);
        let (median_ratio_z, max_ratio_z) = ratio_stats(&reps, |r| r.ratio_z);
        let spread = |med: Option<f64>, max: Option<f64>| match (med, max) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        };
        let all_finite = reps.iter().all(|r| {
            [r.ratio_y, r.ratio_z]
                .iter()
                .all(|x| !matches!(x, Ratio::Value(v) if !v.is_finite()))
        });
        let degenerate = reps
            .iter()
            .all(|r| r.ratio_y == Ratio::Degenerate && r.ratio_z == Ratio::Degenerate);
        LemmaReport {
            n,
            failed,
            spread_y: spread(median_ratio_y, max_ratio_y),
            spread_z: spread(median_ratio_z, max_ratio_z),
            median_ratio_y,
            max_ratio_y,
            median_ratio_z,
            max_ratio_z,
            all_finite,
            degenerate,
            reps,
            seed,
            config_hash: None,
        }
    }
}
