use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use super::contract::PlayerContract;
use super::features::{dot, Coupling, FeatureModel, FeatureNorm};
use super::regression::{LeastSquares, RegressionConfig, Standardizer};
use crate::cost_model::CostSpec;
use crate::error::{Error, Result};
use crate::stochastic_core::{EmpiricalMarginal, FlowRole, MeasureFlow, PathBundle, TimeGrid};
use crate::util::fmt_g12;

/// Upper bound on the raw feature count (degree is at most 8).
const MAX_RAW_WIDTH: usize = 12;

/// n-player system: one contract per player, initial values per `(player, path)`
/// and the drift of each output coordinate on the bundle (0 under the reference measure).
#[derive(Debug, Clone)]
pub struct NPlayerProblem {
    pub contracts: Vec<PlayerContract>,
    pub y0: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
}

impl NPlayerProblem {
    /// Contracts with no initial-value dependence, solved under the reference measure.
    pub fn new(contracts: Vec<PlayerContract>) -> Self {
        let n = contracts.len();
        NPlayerProblem {
            contracts,
            y0: Vec::new(),
            drift: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Also estimate every off-diagonal `Z^{i,d}` (one extra regression per component).
    pub full_z: bool,
}

/// Discrete `(Y, Z)` fields on the bundle paths.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub n_players: usize,
    pub n_paths: usize,
    pub drift: Vec<f64>,
    pub bundle_seed: u64,
    y: Vec<f64>,
    z_own: Vec<f64>,
    z_full: Option<Vec<f64>>,
    states: Vec<f64>,
    y0: Vec<Vec<f64>>,
    /// Per `(player, step)`, coefficients of `Y_k` on the standardized features.
    pub regression_coeffs: Vec<Vec<f64>>,
    norms: Vec<FeatureNorm>,
    features: FeatureModel,
    pub picard_residuals: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl BsdeSolution {
    fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    #[inline]
    pub fn y(&self, player: usize, path: usize, step: usize) -> f64 {
        self.y[(player * (self.n_steps() + 1) + step) * self.n_paths + path]
    }

    /// All paths of player `i` at step `k`.
    pub fn y_row(&self, player: usize, step: usize) -> &[f64] {
        let m = self.n_paths;
        let o = (player * (self.n_steps() + 1) + step) * m;
        &self.y[o..o + m]
    }

    pub fn terminal_values(&self, player: usize) -> &[f64] {
        self.y_row(player, self.n_steps())
    }

    /// `Z^{i,i}` at step `k < n_steps`.
    #[inline]
    pub fn z_own(&self, player: usize, path: usize, step: usize) -> f64 {
        self.z_own[(player * self.n_steps() + step) * self.n_paths + path]
    }

    pub fn has_full_z(&self) -> bool {
        self.z_full.is_some()
    }

    /// `Z^{i,d}` at step `k < n_steps`; off-diagonal entries need [`SolveOptions::full_z`].
    pub fn z(&self, player: usize, path: usize, step: usize, dim: usize) -> Option<f64> {
        if dim == player {
            return Some(self.z_own(player, path, step));
        }
        self.z_full.as_ref().map(|z| {
            z[((player * self.n_steps() + step) * self.n_paths + path) * self.n_players + dim]
        })
    }

    /// Regression state of player `i` (the output for fixed contracts, the forward value otherwise).
    #[inline]
    pub fn state(&self, player: usize, path: usize, step: usize) -> f64 {
        self.states[(player * (self.n_steps() + 1) + step) * self.n_paths + path]
    }

    pub fn initial_value(&self, player: usize, path: usize) -> f64 {
        self.y0.get(player).map(|v| v[path]).unwrap_or(0.0)
    }

    /// Flow of `Y^i` over paths for one player.
    pub fn player_flow(&self, player: usize, role: FlowRole) -> Result<MeasureFlow> {
        let n = self.n_steps();
        let mut values = Vec::with_capacity(self.n_paths * (n + 1));
        for p in 0..self.n_paths {
            for k in 0..=n {
                values.push(self.y(player, p, k));
            }
        }
        MeasureFlow::new(self.grid, role, values)
    }

    /// Empirical measure `pⁿ` of the n players' `Y` paths on one simulated path.
    pub fn empirical_flow(&self, path: usize) -> Result<MeasureFlow> {
        let n = self.n_steps();
        let mut values = Vec::with_capacity(self.n_players * (n + 1));
        for i in 0..self.n_players {
            for k in 0..=n {
                values.push(self.y(i, path, k));
            }
        }
        MeasureFlow::new(self.grid, FlowRole::NPlayer, values)
    }

    /// Regression surrogate of `Y^i_k` at arbitrary states (all players' states at step `k`).
    pub fn y_hat(&self, player: usize, step: usize, states: &[f64], y0: f64) -> f64 {
        if step >= self.n_steps() {
            return f64::NAN;
        }
        let idx = player * self.n_steps() + step;
        let norm = &self.norms[idx];
        let mut raw = [0.0; MAX_RAW_WIDTH];
        let raw = &mut raw[..self.features.raw_width()];
        self.features
            .raw(player, step, states, y0, norm.s_mean, norm.s_inv_sd, raw);
        let coef = &self.regression_coeffs[idx];
        let mut acc = coef[0];
        for (c, &a) in coef[1..].iter().zip(&norm.std.active) {
            acc += c * (raw[a] - norm.std.mean[a]) * norm.std.inv_std[a];
        }
        acc
    }

    /// CSV with header `player,path,step,Y,Z_1..Z_n`. `Z` is defined for steps
    /// before the horizon; the terminal row carries empty `Z` cells, as do
    /// off-diagonal cells when only `Z^{i,i}` was estimated.
    pub fn to_csv(&self) -> String {
        let n = self.n_players;
        let mut out = String::from("player,path,step,Y");
        for d in 1..=n {
            let _ = write!(out, ",Z_{d}");
        }
        out.push('\n');
        for i in 0..n {
            for p in 0..self.n_paths {
                for k in 0..=self.n_steps() {
                    let _ = write!(out, "{i},{p},{k},{}", fmt_g12(self.y(i, p, k)));
                    for d in 0..n {
                        out.push(',');
                        if k < self.n_steps() {
                            if let Some(z) = self.z(i, p, k, d) {
                                out.push_str(&fmt_g12(z));
                            }
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Solves the coupled n-player system by regression Monte Carlo with Picard iteration
/// over whole backward passes.
pub fn solve_nplayer(
    problem: &NPlayerProblem,
    bundle: &PathBundle,
    cost: &CostSpec,
    reg: &RegressionConfig,
    opts: SolveOptions,
) -> Result<BsdeSolution> {
    if problem.contracts.len() < 2 {
        return Err(Error::Config(
            "the n-player system needs at least 2 players".into(),
        ));
    }
    solve_core(problem, bundle, cost, reg, Coupling::Players, opts)
}

/// Mean-field value equation against a fixed flow (single player on bundle coordinate 0).
pub fn solve_meanfield_bsde(
    contract: &PlayerContract,
    y0: &[f64],
    p_star: &MeasureFlow,
    bundle: &PathBundle,
    cost: &CostSpec,
    reg: &RegressionConfig,
    drift: f64,
) -> Result<BsdeSolution> {
    if !p_star.grid.same_as(&bundle.grid) {
        return Err(Error::GridMismatch("flow and bundle grids differ".into()));
    }
    let marginals: Arc<Vec<EmpiricalMarginal>> = Arc::new(p_star.marginals(cost));
    let problem = NPlayerProblem {
        contracts: vec![contract.clone()],
        y0: if y0.is_empty() {
            Vec::new()
        } else {
            vec![y0.to_vec()]
        },
        drift: vec![drift],
    };
    solve_core(
        &problem,
        bundle,
        cost,
        reg,
        Coupling::Flow(marginals),
        SolveOptions::default(),
    )
}

struct StepFit {
    phi: Vec<f64>,
    p: usize,
    ls: LeastSquares,
    ls_phi: LeastSquares,
    norm: FeatureNorm,
    has_s: bool,
    sb2: f64,
}

struct PassOut {
    y: Vec<f64>,
    z: Vec<f64>,
    coef: Vec<Vec<f64>>,
}

fn solve_core(
    problem: &NPlayerProblem,
    bundle: &PathBundle,
    cost: &CostSpec,
    reg: &RegressionConfig,
    coupling: Coupling,
    opts: SolveOptions,
) -> Result<BsdeSolution> {
    reg.validate()?;
    cost.validate()?;
    let n = problem.contracts.len();
    let grid = bundle.grid;
    let ns = grid.n_steps;
    let m = bundle.n_paths;
    let dt = grid.dt();
    if bundle.dims < n {
        return Err(Error::LengthMismatch {
            what: "bundle dims vs players",
            left: bundle.dims,
            right: n,
        });
    }
    if problem.drift.len() != n {
        return Err(Error::LengthMismatch {
            what: "drift vs players",
            left: problem.drift.len(),
            right: n,
        });
    }
    for c in &problem.contracts {
        if c.n_steps() != ns {
            return Err(Error::GridMismatch(format!(
                "contract schedule has {} steps, grid has {ns}",
                c.n_steps()
            )));
        }
    }
    let y0: Vec<Vec<f64>> = if problem.y0.is_empty() {
        vec![vec![0.0; m]; n]
    } else {
        if problem.y0.len() != n || problem.y0.iter().any(|v| v.len() != m) {
            return Err(Error::Config("y0 must be given per (player, path)".into()));
        }
        problem.y0.clone()
    };
    let drift = &problem.drift;

    // forward states, [player][step][path]
    let states: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let c = &problem.contracts[i];
            let mut st = vec![0.0; (ns + 1) * m];
            for p in 0..m {
                let mut s = c.initial_state(y0[i][p]);
                st[p] = s;
                for k in 0..ns {
                    s = c.advance(k, s, drift[i] * dt + bundle.increment(p, k, i));
                    st[(k + 1) * m + p] = s;
                }
            }
            st.into_iter()
        })
        .collect();
    let st = |i: usize, k: usize, p: usize| states[(i * (ns + 1) + k) * m + p];

    let features = FeatureModel {
        degree: reg.degree,
        cost: *cost,
        coupling: coupling.clone(),
        n_players: n,
    };
    let s_b = |i: usize, k: usize, p: usize| -> f64 {
        let mut s = 0.0;
        for (d, b) in drift.iter().enumerate() {
            if d != i && *b != 0.0 {
                s += b * bundle.increment(p, k, d);
            }
        }
        s
    };

    let fits: Vec<StepFit> = (0..n * ns)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / ns, idx % ns);
            let mut mean = 0.0;
            for p in 0..m {
                mean += st(i, k, p);
            }
            mean /= m as f64;
            let mut var = 0.0;
            for p in 0..m {
                var += (st(i, k, p) - mean).powi(2);
            }
            let sd = (var / m as f64).sqrt();
            let s_inv_sd = if sd > 1e-12 * (1.0 + mean.abs()) {
                1.0 / sd
            } else {
                0.0
            };
            let rw = features.raw_width();
            let mut raw = vec![0.0; m * rw];
            let mut all = vec![0.0; n];
            for p in 0..m {
                for (j, a) in all.iter_mut().enumerate() {
                    *a = st(j, k, p);
                }
                features.raw(
                    i,
                    k,
                    &all,
                    y0[i][p],
                    mean,
                    s_inv_sd,
                    &mut raw[p * rw..(p + 1) * rw],
                );
            }
            let norm = FeatureNorm {
                s_mean: mean,
                s_inv_sd,
                std: Standardizer::fit(&raw, m, rw),
            };
            let pw = 1 + norm.std.width();
            let mut phi = Vec::with_capacity(m * pw);
            let mut row = Vec::with_capacity(pw);
            for p in 0..m {
                features.row(&norm, &raw[p * rw..(p + 1) * rw], &mut row);
                phi.extend_from_slice(&row);
            }
            let sb2: f64 = drift
                .iter()
                .enumerate()
                .filter(|(d, _)| *d != i)
                .map(|(_, b)| b * b)
                .sum();
            let has_s = sb2 > 0.0;
            let q = if has_s { 3 * pw } else { 2 * pw };
            let mut design = Vec::with_capacity(m * q);
            for p in 0..m {
                let f = &phi[p * pw..(p + 1) * pw];
                let dw = bundle.increment(p, k, i);
                design.extend_from_slice(f);
                design.extend(f.iter().map(|v| v * dw));
                if has_s {
                    let sb = s_b(i, k, p);
                    design.extend(f.iter().map(|v| v * sb));
                }
            }
            let ls = LeastSquares::fit(&design, m, q, reg.ridge, &[0, pw])
                .ok_or(Error::RankDeficient { player: i, step: k })?;
            let ls_phi = LeastSquares::fit(&phi, m, pw, reg.ridge, &[0])
                .ok_or(Error::RankDeficient { player: i, step: k })?;
            Ok(StepFit {
                phi,
                p: pw,
                ls,
                ls_phi,
                norm,
                has_s,
                sb2,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let xi: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|p| problem.contracts[i].terminal(st(i, ns, p)))
                .collect()
        })
        .collect();

    // one backward pass for player i given the previous iterate (used only for coupling)
    let pass = |i: usize, prev: &[f64]| -> PassOut {
        let mut y = vec![0.0; (ns + 1) * m];
        let mut z = vec![0.0; ns * m];
        let mut coef = vec![Vec::new(); ns];
        y[ns * m..].copy_from_slice(&xi[i]);
        let prev_at = |j: usize, k: usize, p: usize| prev[(j * (ns + 1) + k) * m + p];
        for k in (0..ns).rev() {
            let fit = &fits[i * ns + k];
            let pw = fit.p;
            let q = if fit.has_s { 3 * pw } else { 2 * pw };
            let mut rhs = vec![0.0; q];
            let (head, tail) = y.split_at_mut((k + 1) * m);
            let target = &tail[..m];
            for p in 0..m {
                let f = &fit.phi[p * pw..(p + 1) * pw];
                let yv = target[p];
                let dw = bundle.increment(p, k, i);
                for a in 0..pw {
                    let fy = f[a] * yv;
                    rhs[a] += fy;
                    rhs[pw + a] += fy * dw;
                }
                if fit.has_s {
                    let sb = s_b(i, k, p);
                    for a in 0..pw {
                        rhs[2 * pw + a] += f[a] * yv * sb;
                    }
                }
            }
            let c = fit.ls.solve_moments(&rhs, m);
            let wage = problem.contracts[i].wage(k);
            let yk = &mut head[k * m..(k + 1) * m];
            for p in 0..m {
                let f = &fit.phi[p * pw..(p + 1) * pw];
                let e = dot(f, &c[..pw]);
                let zi = dot(f, &c[pw..2 * pw]);
                let zs = if fit.has_s {
                    dot(f, &c[2 * pw..3 * pw]) * fit.sb2
                } else {
                    0.0
                };
                let base = e + dt * (wage + (1.0 - drift[i]) * zi - zs);
                yk[p] = match &coupling {
                    Coupling::Players => {
                        let yi = prev_at(i, k, p);
                        let mut acc = 0.0;
                        for j in 0..n {
                            if j != i {
                                acc += cost.conjugate(prev_at(j, k, p) - yi);
                            }
                        }
                        base + dt * acc / (n - 1) as f64
                    }
                    Coupling::Flow(marg) => {
                        let mut v = base + dt * marg[k].mean_conjugate(base);
                        for _ in 0..60 {
                            let nv = base + dt * marg[k].mean_conjugate(v);
                            let done = (nv - v).abs() <= 1e-15 * (1.0 + v.abs());
                            v = nv;
                            if done {
                                break;
                            }
                        }
                        v
                    }
                };
                z[k * m + p] = zi;
            }
            coef[k] = c;
        }
        PassOut { y, z, coef }
    };

    let mut warnings = Vec::new();
    let mut residuals = Vec::new();
    let mut converged = false;
    let outs: Vec<PassOut> = match &coupling {
        Coupling::Flow(_) => {
            converged = true;
            vec![pass(0, &[])]
        }
        Coupling::Players => {
            let mut prev: Vec<f64> = Vec::with_capacity(n * (ns + 1) * m);
            for x in &xi {
                for _ in 0..=ns {
                    prev.extend_from_slice(x);
                }
            }
            let mut last: Vec<PassOut> = Vec::new();
            for it in 0..reg.max_picard {
                let outs: Vec<PassOut> = (0..n).into_par_iter().map(|i| pass(i, &prev)).collect();
                let mut res = 0.0_f64;
                for (i, o) in outs.iter().enumerate() {
                    let base = i * (ns + 1) * m;
                    for (a, b) in o.y.iter().zip(&prev[base..base + (ns + 1) * m]) {
                        res = res.max((a - b).abs());
                    }
                }
                for (i, o) in outs.iter().enumerate() {
                    let base = i * (ns + 1) * m;
                    prev[base..base + (ns + 1) * m].copy_from_slice(&o.y);
                }
                if it >= 2 && res > residuals[it - 1] {
                    warnings.push(format!(
                        "picard residual increased at iteration {}: {} -> {}",
                        it + 1,
                        fmt_g12(residuals[it - 1]),
                        fmt_g12(res)
                    ));
                }
                residuals.push(res);
                last = outs;
                if !res.is_finite() {
                    warnings.push("picard iteration diverged".into());
                    break;
                }
                if res < reg.tol_picard {
                    converged = true;
                    break;
                }
            }
            if !converged {
                warnings.push(format!(
                    "picard iteration stopped after {} passes with residual {}",
                    residuals.len(),
                    fmt_g12(*residuals.last().unwrap_or(&f64::NAN))
                ));
            }
            last
        }
    };

    let mut y = Vec::with_capacity(n * (ns + 1) * m);
    let mut z_own = Vec::with_capacity(n * ns * m);
    for o in &outs {
        y.extend_from_slice(&o.y);
        z_own.extend_from_slice(&o.z);
    }
    if z_own.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        warnings.push("non-finite values in the solution".into());
    }

    let regression_coeffs: Vec<Vec<f64>> = (0..n * ns)
        .into_par_iter()
        .map(|idx| {
            let (i, k) = (idx / ns, idx % ns);
            let fit = &fits[idx];
            let o = (i * (ns + 1) + k) * m;
            fit.ls_phi.solve(&fit.phi, &y[o..o + m])
        })
        .collect();

    let z_full = if opts.full_z {
        let blocks: Vec<Vec<f64>> = (0..n * ns)
            .into_par_iter()
            .map(|idx| {
                let (i, k) = (idx / ns, idx % ns);
                let fit = &fits[idx];
                let pw = fit.p;
                let c = &outs[i].coef[k];
                let o = (i * (ns + 1) + k + 1) * m;
                let next = &y[o..o + m];
                let resid: Vec<f64> = (0..m)
                    .map(|p| {
                        let f = &fit.phi[p * pw..(p + 1) * pw];
                        let mut r = next[p]
                            - dot(f, &c[..pw])
                            - dot(f, &c[pw..2 * pw]) * bundle.increment(p, k, i);
                        if fit.has_s {
                            r -= dot(f, &c[2 * pw..3 * pw]) * s_b(i, k, p);
                        }
                        r
                    })
                    .collect();
                let mut block = vec![0.0; m * n];
                for d in 0..n {
                    if d == i {
                        for p in 0..m {
                            block[p * n + d] = z_own[(i * ns + k) * m + p];
                        }
                        continue;
                    }
                    let target: Vec<f64> = (0..m)
                        .map(|p| resid[p] * bundle.increment(p, k, d) / dt)
                        .collect();
                    let g = fit.ls_phi.solve(&fit.phi, &target);
                    for p in 0..m {
                        let f = &fit.phi[p * pw..(p + 1) * pw];
                        let mut v = dot(f, &g);
                        if fit.has_s {
                            v += dot(f, &c[2 * pw..3 * pw]) * drift[d];
                        }
                        block[p * n + d] = v;
                    }
                }
                block
            })
            .collect();
        Some(blocks.concat())
    } else {
        None
    };

    Ok(BsdeSolution {
        grid,
        n_players: n,
        n_paths: m,
        drift: drift.clone(),
        bundle_seed: bundle.seed,
        y,
        z_own,
        z_full,
        states,
        y0,
        regression_coeffs,
        norms: fits.into_iter().map(|f| f.norm).collect(),
        features,
        picard_residuals: residuals,
        converged,
        warnings,
    })
}
